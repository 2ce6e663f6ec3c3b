import { EditOpJson, RenderRequest, ToneParams } from "./types.js";

export interface LightState {
	azimuthDeg: number;
	elevationDeg: number;
	intensity: number;
}

export const DEFAULT_LIGHT: LightState = {
	azimuthDeg: 0,
	elevationDeg: 45,
	intensity: Math.exp(3), // inference-time default
};

export const DEFAULT_TONE: ToneParams = { mu: 64, alpha: 0.2 };

/**
 * The whole UI state for one session. Pure data plus pure transitions, so
 * a serialized session replays to the same request body.
 */
export class SessionState {
	bundleId: string | null = null;
	light: LightState = { ...DEFAULT_LIGHT };
	editStack: EditOpJson[] = [];
	tone: ToneParams = { ...DEFAULT_TONE };
	requestInFlight = false;

	selectBundle(id: string): void {
		this.bundleId = id;
		this.editStack = [];
		this.light = { ...DEFAULT_LIGHT };
	}

	setLight(partial: Partial<LightState>): void {
		this.light = { ...this.light, ...partial };
	}

	/** Sliders replace the latest op of the same kind instead of stacking duplicates. */
	upsertEdit(op: EditOpJson): void {
		const i = this.editStack.findIndex((e) => e.kind === op.kind);
		if (i >= 0) this.editStack[i] = op;
		else this.editStack.push(op);
	}

	removeEdit(index: number): void {
		this.editStack.splice(index, 1);
	}

	moveEdit(index: number, delta: -1 | 1): void {
		const j = index + delta;
		if (index < 0 || index >= this.editStack.length || j < 0 || j >= this.editStack.length) return;
		const [op] = this.editStack.splice(index, 1);
		this.editStack.splice(j, 0, op!);
	}

	resetEdits(): void {
		this.editStack = [];
	}

	toRenderRequest(): RenderRequest {
		if (!this.bundleId) throw new Error("no bundle selected");
		return {
			bundle_id: this.bundleId,
			light: {
				azimuth_deg: this.light.azimuthDeg,
				elevation_deg: this.light.elevationDeg,
				intensity: this.light.intensity,
			},
			edits: this.editStack.map((e) => ({ kind: e.kind, params: { ...e.params } })),
			tone: { ...this.tone },
		};
	}

	serialize(): string {
		return JSON.stringify({
			bundleId: this.bundleId,
			light: this.light,
			editStack: this.editStack,
			tone: this.tone,
		});
	}

	static restore(blob: string): SessionState {
		const data = JSON.parse(blob) as {
			bundleId: string | null;
			light: LightState;
			editStack: EditOpJson[];
			tone: ToneParams;
		};
		const s = new SessionState();
		s.bundleId = data.bundleId;
		s.light = { ...data.light };
		s.editStack = data.editStack.map((e) => ({ kind: e.kind, params: { ...e.params } }));
		s.tone = { ...data.tone };
		return s;
	}
}

type Timer = ReturnType<typeof setTimeout>;

/**
 * Latest-wins render scheduling: at most one request in flight, trailing
 * calls within the debounce window collapse, and stale responses are
 * dropped by sequence number. The clock is injectable for tests.
 */
export class RenderScheduler {
	private seq = 0;
	private applied = 0;
	private timer: Timer | null = null;
	private pending: (() => void) | null = null;
	requestCount = 0;

	constructor(
		private readonly run: () => Promise<Blob>,
		private readonly onImage: (blob: Blob) => void,
		private readonly onError: (err: unknown) => void,
		private readonly debounceMs = 60,
		private readonly schedule: (fn: () => void, ms: number) => Timer = setTimeout,
		private readonly cancel: (t: Timer) => void = clearTimeout,
	) {}

	/** Ask for a re-render reflecting the current state. */
	request(): void {
		this.pending = () => void this.fire();
		if (this.timer !== null) this.cancel(this.timer);
		this.timer = this.schedule(() => {
			this.timer = null;
			const p = this.pending;
			this.pending = null;
			p?.();
		}, this.debounceMs);
	}

	private async fire(): Promise<void> {
		const ticket = ++this.seq;
		this.requestCount += 1;
		try {
			const blob = await this.run();
			if (ticket > this.applied) {
				this.applied = ticket;
				this.onImage(blob);
			}
		} catch (err) {
			this.onError(err);
		}
	}
}
