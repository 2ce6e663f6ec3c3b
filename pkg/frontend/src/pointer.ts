/** Pointer-position to light-angle mapping for the drag pad. */

export interface PadAngles {
	azimuthDeg: number;
	elevationDeg: number;
}

/**
 * Horizontal drag position wraps the full azimuth circle; vertical covers
 * elevation 5..85 degrees (top = overhead). Values are clamped so wild
 * pointer coordinates still produce a valid light.
 */
export function padToAngles(x: number, y: number, width: number, height: number): PadAngles {
	const u = Math.min(Math.max(width > 0 ? x / width : 0, 0), 1);
	const v = Math.min(Math.max(height > 0 ? y / height : 0, 0), 1);
	return {
		azimuthDeg: u * 360,
		elevationDeg: 85 - v * 80,
	};
}

export function anglesToPad(angles: PadAngles, width: number, height: number): { x: number; y: number } {
	const az = ((angles.azimuthDeg % 360) + 360) % 360;
	const el = Math.min(Math.max(angles.elevationDeg, 5), 85);
	return { x: (az / 360) * width, y: ((85 - el) / 80) * height };
}

export function formatAzimuth(deg: number): string {
	return `${(((deg % 360) + 360) % 360).toFixed(0)}°`;
}
