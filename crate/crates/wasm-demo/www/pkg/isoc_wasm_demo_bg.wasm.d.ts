/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_demo_free: (a: number, b: number) => void;
export const demo_horizon: (a: number) => number;
export const demo_lowerBounds: (a: number) => [number, number];
export const demo_moments: (a: number, b: number, c: number) => [number, number, number, number];
export const demo_new: (a: number) => [number, number, number];
export const demo_objective: (a: number, b: number, c: number) => number;
export const demo_rollouts: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
export const demo_slice: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const demo_sliceAxis: (a: number, b: number, c: number) => [number, number];
export const demo_thetaTrue: (a: number) => [number, number];
export const demo_upperBounds: (a: number) => [number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_start: () => void;
