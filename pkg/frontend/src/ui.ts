import { ApiClient, ApiError } from "./api.js";
import { padToAngles, formatAzimuth } from "./pointer.js";
import { RenderScheduler, SessionState } from "./state.js";
import { EditOpJson, MAP_NAMES } from "./types.js";

function el<K extends keyof HTMLElementTagNameMap>(
	tag: K,
	cls?: string,
	text?: string,
): HTMLElementTagNameMap[K] {
	const node = document.createElement(tag);
	if (cls) node.className = cls;
	if (text) node.textContent = text;
	return node;
}

export class Workbench {
	private readonly state = new SessionState();
	private readonly scheduler: RenderScheduler;
	private imageUrl: string | null = null;
	private initialRenderBytes: ArrayBuffer | null = null;

	private readonly picker: HTMLElement;
	private readonly viewer: HTMLImageElement;
	private readonly banner: HTMLElement;
	private readonly stackList: HTMLElement;
	private readonly azimuthReadout: HTMLElement;

	constructor(
		private readonly api: ApiClient,
		root: HTMLElement,
	) {
		this.banner = el("div", "banner hidden");
		this.picker = el("div", "picker");
		this.viewer = el("img", "viewer");
		this.viewer.alt = "rendered image";
		this.stackList = el("ul", "edit-stack");
		this.azimuthReadout = el("span", "readout", "0°");

		this.scheduler = new RenderScheduler(
			() => this.api.render(this.state.toRenderRequest()),
			(blob) => this.showImage(blob),
			(err) => this.toast(err instanceof ApiError ? err.message : String(err)),
		);

		root.append(this.banner, this.picker, this.buildControls(), this.viewer);
		void this.refreshBundles();
	}

	// --- bundle picker -----------------------------------------------------

	async refreshBundles(): Promise<void> {
		this.banner.classList.add("hidden");
		try {
			const bundles = await this.api.listBundles();
			this.picker.replaceChildren();
			if (bundles.length === 0) {
				this.picker.append(el("p", "empty", "No bundles on the service yet. Upload one, then reload."));
				return;
			}
			for (const b of bundles) {
				const card = el("div", "card");
				card.append(el("div", "card-title", `${b.id} (${b.width}×${b.height})`));
				const strip = el("div", "thumbs");
				for (const map of MAP_NAMES) {
					const img = el("img", "thumb");
					img.src = this.api.mapUrl(b.id, map);
					img.title = map;
					strip.append(img);
				}
				card.append(strip);
				card.addEventListener("click", () => void this.selectBundle(b.id));
				this.picker.append(card);
			}
		} catch (err) {
			this.showBanner(
				err instanceof ApiError ? `Service error: ${err.message}` : `Service unreachable: ${err}`,
			);
		}
	}

	private showBanner(message: string): void {
		this.banner.replaceChildren();
		this.banner.classList.remove("hidden");
		this.banner.append(el("span", undefined, message));
		const retry = el("button", undefined, "Retry");
		retry.addEventListener("click", () => void this.refreshBundles());
		this.banner.append(retry);
	}

	private async selectBundle(id: string): Promise<void> {
		this.state.selectBundle(id);
		this.initialRenderBytes = null;
		this.renderStack();
		try {
			const blob = await this.api.render(this.state.toRenderRequest());
			this.initialRenderBytes = await blob.arrayBuffer();
			this.showImage(blob);
		} catch (err) {
			this.toast(String(err));
		}
	}

	// --- rendering ---------------------------------------------------------

	private showImage(blob: Blob): void {
		if (this.imageUrl) URL.revokeObjectURL(this.imageUrl);
		this.imageUrl = URL.createObjectURL(blob);
		this.viewer.src = this.imageUrl;
	}

	private toast(message: string): void {
		const t = el("div", "toast", message);
		document.body.append(t);
		setTimeout(() => t.remove(), 2500);
	}

	// --- controls ----------------------------------------------------------

	private buildControls(): HTMLElement {
		const panel = el("div", "controls");

		const pad = el("div", "light-pad");
		pad.append(this.azimuthReadout);
		const onPointer = (ev: PointerEvent) => {
			if (!this.state.bundleId || ev.buttons === 0) return;
			const rect = pad.getBoundingClientRect();
			const a = padToAngles(ev.clientX - rect.left, ev.clientY - rect.top, rect.width, rect.height);
			this.state.setLight({ azimuthDeg: a.azimuthDeg, elevationDeg: a.elevationDeg });
			this.azimuthReadout.textContent = formatAzimuth(a.azimuthDeg);
			this.scheduler.request();
		};
		pad.addEventListener("pointerdown", onPointer);
		pad.addEventListener("pointermove", onPointer);
		panel.append(labelled("Light (drag)", pad));

		panel.append(
			this.slider("Intensity", 0, 40, Math.exp(3), 0.1, (v) => {
				this.state.setLight({ intensity: v });
				this.scheduler.request();
			}),
			this.slider("Roughness scale", 0, 2, 1, 0.01, (v) => {
				this.upsert({ kind: "roughness_scale", params: { factor: v } });
			}),
			this.slider("Metallic", 0, 1, 0, 0.01, (v) => {
				this.upsert({ kind: "metallic_set", params: { value: v } });
			}),
			this.slider("Desaturate", 0, 1, 0, 0.01, (v) => {
				this.upsert({ kind: "albedo_desaturate", params: { strength: v } });
			}),
		);

		const reset = el("button", "reset", "Reset edits");
		reset.addEventListener("click", () => {
			this.state.resetEdits();
			this.renderStack();
			this.scheduler.request();
		});
		panel.append(reset, labelled("Edit stack", this.stackList));
		return panel;
	}

	private upsert(op: EditOpJson): void {
		this.state.upsertEdit(op);
		this.renderStack();
		this.scheduler.request();
	}

	private renderStack(): void {
		this.stackList.replaceChildren();
		this.state.editStack.forEach((op, i) => {
			const item = el("li", "edit-item", `${op.kind} ${JSON.stringify(op.params)}`);
			for (const [label, delta] of [["↑", -1] as const, ["↓", 1] as const]) {
				const btn = el("button", undefined, label);
				btn.addEventListener("click", () => {
					this.state.moveEdit(i, delta);
					this.renderStack();
					this.scheduler.request();
				});
				item.append(btn);
			}
			const del = el("button", undefined, "×");
			del.addEventListener("click", () => {
				this.state.removeEdit(i);
				this.renderStack();
				this.scheduler.request();
			});
			item.append(del);
		});
	}

	private slider(
		label: string,
		min: number,
		max: number,
		value: number,
		step: number,
		onInput: (v: number) => void,
	): HTMLElement {
		const input = el("input");
		input.type = "range";
		input.min = String(min);
		input.max = String(max);
		input.step = String(step);
		input.value = String(value);
		input.addEventListener("input", () => onInput(Number(input.value)));
		return labelled(label, input);
	}
}

function labelled(title: string, node: HTMLElement): HTMLElement {
	const wrap = el("div", "labelled");
	wrap.append(el("label", undefined, title), node);
	return wrap;
}
