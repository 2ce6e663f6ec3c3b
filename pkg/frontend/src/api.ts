import { BundleInfo, MapName, RenderRequest, validateRenderRequest } from "./types.js";

export class ApiError extends Error {
	constructor(
		message: string,
		readonly status?: number,
	) {
		super(message);
	}
}

/** Thin typed client over the render service; every image comes from here. */
export class ApiClient {
	constructor(readonly baseUrl: string = "") {}

	private async json<T>(path: string): Promise<T> {
		let resp: Response;
		try {
			resp = await fetch(this.baseUrl + path);
		} catch (err) {
			throw new ApiError(`service unreachable: ${err}`);
		}
		if (!resp.ok) throw new ApiError(await safeErrorText(resp), resp.status);
		return (await resp.json()) as T;
	}

	listBundles(): Promise<BundleInfo[]> {
		return this.json<BundleInfo[]>("/bundles");
	}

	mapUrl(bundleId: string, map: MapName): string {
		return `${this.baseUrl}/bundles/${encodeURIComponent(bundleId)}/maps/${map}`;
	}

	async render(req: RenderRequest): Promise<Blob> {
		validateRenderRequest(req);
		let resp: Response;
		try {
			resp = await fetch(this.baseUrl + "/render", {
				method: "POST",
				headers: { "Content-Type": "application/json" },
				body: JSON.stringify(req),
			});
		} catch (err) {
			throw new ApiError(`render failed: ${err}`);
		}
		if (!resp.ok) throw new ApiError(await safeErrorText(resp), resp.status);
		return resp.blob();
	}
}

async function safeErrorText(resp: Response): Promise<string> {
	try {
		const body = (await resp.json()) as { error?: string };
		return body.error ?? `HTTP ${resp.status}`;
	} catch {
		return `HTTP ${resp.status}`;
	}
}
