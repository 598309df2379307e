/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_demo_free: (a: number, b: number) => void;
export const __wbg_perturbed_free: (a: number, b: number) => void;
export const demo_depth: (a: number) => [number, number];
export const demo_height: (a: number) => number;
export const demo_new: (a: number, b: number) => [number, number, number];
export const demo_perturb_depth: (a: number, b: number, c: number, d: number, e: number) => [number, number, number];
export const demo_perturb_rgb: (a: number, b: number, c: number, d: number, e: number) => [number, number, number];
export const demo_render: (a: number, b: number) => [number, number];
export const demo_width: (a: number) => number;
export const depth_kinds: () => [number, number];
export const perturbed_pixels: (a: number) => [number, number];
export const perturbed_score: (a: number) => number;
export const rgb_kinds: () => [number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __wbindgen_start: () => void;
