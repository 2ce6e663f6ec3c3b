/** Wire types mirroring the render service API. */

export interface BundleInfo {
	id: string;
	width: number;
	height: number;
}

export interface LightParams {
	azimuth_deg: number;
	elevation_deg: number;
	intensity: number;
}

export type EditKind =
	| "albedo_desaturate"
	| "albedo_tint"
	| "roughness_scale"
	| "roughness_set"
	| "metallic_set";

export interface EditOpJson {
	kind: EditKind;
	params: Record<string, number | number[]>;
}

export interface ToneParams {
	mu: number;
	alpha: number;
}

export interface RenderRequest {
	bundle_id: string;
	light: LightParams;
	edits: EditOpJson[];
	tone: ToneParams;
}

export const MAP_NAMES = ["albedo", "roughness", "metallic", "normal"] as const;
export type MapName = (typeof MAP_NAMES)[number];

const EDIT_KINDS: readonly string[] = [
	"albedo_desaturate",
	"albedo_tint",
	"roughness_scale",
	"roughness_set",
	"metallic_set",
];

/** Throws if a request would be rejected by the service schema. */
export function validateRenderRequest(req: RenderRequest): void {
	if (!req.bundle_id) throw new Error("render request needs a bundle_id");
	const { azimuth_deg, elevation_deg, intensity } = req.light;
	for (const [name, v] of Object.entries({ azimuth_deg, elevation_deg, intensity })) {
		if (typeof v !== "number" || !Number.isFinite(v)) {
			throw new Error(`light.${name} must be a finite number`);
		}
	}
	if (intensity < 0) throw new Error("light intensity must be >= 0");
	if (req.tone.mu <= 0) throw new Error("tone.mu must be positive");
	if (req.tone.alpha < 0 || req.tone.alpha > 1) throw new Error("tone.alpha must lie in [0, 1]");
	for (const op of req.edits) {
		if (!EDIT_KINDS.includes(op.kind)) throw new Error(`unknown edit kind ${op.kind}`);
		if (typeof op.params !== "object") throw new Error("edit params must be an object");
	}
}
