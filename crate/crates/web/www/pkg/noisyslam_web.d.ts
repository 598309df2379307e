/* tslint:disable */
/* eslint-disable */

export class Demo {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Current depth, near dark and far bright, missing pixels red.
     */
    depth(): Uint8Array;
    constructor(seed: number, gaussians: number);
    /**
     * The current depth under one depth corruption; the score is the
     * fraction of pixels still valid.
     */
    perturb_depth(kind: string, level: number, seed: number): Perturbed;
    /**
     * The current view under one colour corruption.
     */
    perturb_rgb(kind: string, level: number, seed: number): Perturbed;
    /**
     * Moves the camera to `theta` radians around the orbit and returns the colour view.
     */
    render(theta: number): Uint8Array;
    readonly height: number;
    readonly width: number;
}

/**
 * Pixels plus one number describing them.
 */
export class Perturbed {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    readonly pixels: Uint8Array;
    readonly score: number;
}

/**
 * Comma-separated depth corruption names.
 */
export function depth_kinds(): string;

/**
 * Comma-separated colour corruption names.
 */
export function rgb_kinds(): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_demo_free: (a: number, b: number) => void;
    readonly __wbg_perturbed_free: (a: number, b: number) => void;
    readonly demo_depth: (a: number) => [number, number];
    readonly demo_height: (a: number) => number;
    readonly demo_new: (a: number, b: number) => [number, number, number];
    readonly demo_perturb_depth: (a: number, b: number, c: number, d: number, e: number) => [number, number, number];
    readonly demo_perturb_rgb: (a: number, b: number, c: number, d: number, e: number) => [number, number, number];
    readonly demo_render: (a: number, b: number) => [number, number];
    readonly demo_width: (a: number) => number;
    readonly depth_kinds: () => [number, number];
    readonly perturbed_pixels: (a: number) => [number, number];
    readonly perturbed_score: (a: number) => number;
    readonly rgb_kinds: () => [number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
    readonly __wbindgen_start: () => void;
}

export type SyncInitInput = BufferSource | WebAssembly.Module;

/**
 * Instantiates the given `module`, which can either be bytes or
 * a precompiled `WebAssembly.Module`.
 *
 * @param {{ module: SyncInitInput }} module - Passing `SyncInitInput` directly is deprecated.
 *
 * @returns {InitOutput}
 */
export function initSync(module: { module: SyncInitInput } | SyncInitInput): InitOutput;

/**
 * If `module_or_path` is {RequestInfo} or {URL}, makes a request and
 * for everything else, calls `WebAssembly.instantiate` directly.
 *
 * @param {{ module_or_path: InitInput | Promise<InitInput> }} module_or_path - Passing `InitInput` directly is deprecated.
 *
 * @returns {Promise<InitOutput>}
 */
export default function __wbg_init (module_or_path?: { module_or_path: InitInput | Promise<InitInput> } | InitInput | Promise<InitInput>): Promise<InitOutput>;
