/** Contract-test plumbing: spawn the Python render service, decode PNGs. */

import { spawn, spawnSync, ChildProcess } from "node:child_process";
import { mkdtempSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { inflateSync } from "node:zlib";

export interface LiveService {
	baseUrl: string;
	stop(): void;
}

export async function startService(): Promise<LiveService> {
	const store = mkdtempSync(join(tmpdir(), "workbench-store-"));
	const gen = spawnSync(
		"python3",
		["-m", "pbrflow.cli", "--seed", "7", "--out", store, "gen-data", "--n", "2", "--res", "48"],
		{ encoding: "utf8" },
	);
	if (gen.status !== 0) {
		throw new Error(`gen-data failed: ${gen.stderr}`);
	}

	const proc: ChildProcess = spawn(
		"python3",
		["-m", "pbrflow.cli", "serve", "--store", store, "--port", "0"],
		{ stdio: ["ignore", "pipe", "pipe"] },
	);
	const baseUrl = await new Promise<string>((resolve, reject) => {
		const timer = setTimeout(() => reject(new Error("service did not start in time")), 15000);
		let buffer = "";
		proc.stdout!.on("data", (chunk: Buffer) => {
			buffer += chunk.toString();
			const m = buffer.match(/listening on (http:\/\/[\d.]+:\d+)/);
			if (m) {
				clearTimeout(timer);
				resolve(m[1]!);
			}
		});
		proc.stderr!.on("data", () => undefined);
		proc.on("exit", (code) => reject(new Error(`service exited early (${code})`)));
	});
	return {
		baseUrl,
		stop: () => {
			proc.kill("SIGTERM");
		},
	};
}

export interface Pixels {
	width: number;
	height: number;
	channels: number;
	/** row-major, channel-interleaved, normalized to [0, 1] */
	data: Float64Array;
}

/** Decode the service's 8-bit PNGs (filter-0 scanlines, one IDAT stream). */
export function decodePng(buf: Uint8Array): Pixels {
	const view = new DataView(buf.buffer, buf.byteOffset, buf.byteLength);
	let pos = 8; // signature
	let width = 0;
	let height = 0;
	let bitDepth = 0;
	let colorType = 0;
	const idat: Uint8Array[] = [];
	while (pos < buf.length) {
		const length = view.getUint32(pos);
		const tag = new TextDecoder().decode(buf.subarray(pos + 4, pos + 8));
		const payload = buf.subarray(pos + 8, pos + 8 + length);
		pos += 12 + length;
		if (tag === "IHDR") {
			const dv = new DataView(payload.buffer, payload.byteOffset, payload.byteLength);
			width = dv.getUint32(0);
			height = dv.getUint32(4);
			bitDepth = payload[8]!;
			colorType = payload[9]!;
		} else if (tag === "IDAT") {
			idat.push(payload);
		} else if (tag === "IEND") {
			break;
		}
	}
	if (bitDepth !== 8 && bitDepth !== 16) throw new Error(`unsupported bit depth ${bitDepth}`);
	const channels = colorType === 2 ? 3 : 1;
	const bytesPer = bitDepth / 8;
	const stride = width * channels * bytesPer;
	const raw = inflateSync(Buffer.concat(idat.map((c) => Buffer.from(c))));
	const out = new Float64Array(width * height * channels);
	const maxVal = bitDepth === 8 ? 255 : 65535;
	for (let y = 0; y < height; y++) {
		const rowStart = y * (stride + 1);
		if (raw[rowStart] !== 0) throw new Error(`unexpected scanline filter ${raw[rowStart]}`);
		for (let i = 0; i < width * channels; i++) {
			const at = rowStart + 1 + i * bytesPer;
			const v = bitDepth === 8 ? raw[at]! : (raw[at]! << 8) | raw[at + 1]!;
			out[y * width * channels + i] = v / maxVal;
		}
	}
	return { width, height, channels, data: out };
}

export function luminance(px: Pixels, i: number): number {
	const at = i * px.channels;
	if (px.channels === 1) return px.data[at]!;
	return 0.2126 * px.data[at]! + 0.7152 * px.data[at + 1]! + 0.0722 * px.data[at + 2]!;
}

/** Share of total luminance carried by the brightest 1% of pixels. */
export function topOnePercentShare(px: Pixels): number {
	const n = px.width * px.height;
	const lums = new Float64Array(n);
	let total = 0;
	for (let i = 0; i < n; i++) {
		lums[i] = luminance(px, i);
		total += lums[i]!;
	}
	lums.sort();
	const k = Math.max(1, Math.floor(n / 100));
	let top = 0;
	for (let i = n - k; i < n; i++) top += lums[i]!;
	return total > 0 ? top / total : 0;
}

/** Mean over pixels of (max - min) across channels. */
export function meanChroma(px: Pixels): number {
	if (px.channels !== 3) return 0;
	const n = px.width * px.height;
	let acc = 0;
	for (let i = 0; i < n; i++) {
		const r = px.data[i * 3]!;
		const g = px.data[i * 3 + 1]!;
		const b = px.data[i * 3 + 2]!;
		acc += Math.max(r, g, b) - Math.min(r, g, b);
	}
	return acc / n;
}
