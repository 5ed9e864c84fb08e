/* tslint:disable */
/* eslint-disable */

export class Demo {
    free(): void;
    [Symbol.dispose](): void;
    horizon(): number;
    lowerBounds(): Float64Array;
    /**
     * Mean position and its standard deviation per axis for
     * `t = 0..=N`, [`MOMENT_STRIDE`] values per step.
     */
    moments(theta: Float64Array): Float64Array;
    /**
     * Reaching example over `horizon` steps of 10 ms.
     */
    constructor(horizon: number);
    /**
     * `J_ISOC(θ)`; NaN where the forward problem fails.
     */
    objective(theta: Float64Array): number;
    /**
     * `n` simulated hand paths, rollout-major, `(p_x, p_y)` per step.
     */
    rollouts(theta: Float64Array, n: number, seed: number): Float64Array;
    /**
     * Axis values of component `i` (1-based) used by [`Demo::slice`].
     */
    sliceAxis(i: number, steps: number): Float64Array;
    /**
     * `J_ISOC` on a `steps × steps` grid in the plane of components `i`
     * and `j` (1-based) through θ*, row-major in `i`; NaN marks failures.
     */
    slice(i: number, j: number, steps: number): Float64Array;
    thetaTrue(): Float64Array;
    upperBounds(): Float64Array;
}

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_demo_free: (a: number, b: number) => void;
    readonly demo_horizon: (a: number) => number;
    readonly demo_lowerBounds: (a: number) => [number, number];
    readonly demo_moments: (a: number, b: number, c: number) => [number, number, number, number];
    readonly demo_new: (a: number) => [number, number, number];
    readonly demo_objective: (a: number, b: number, c: number) => number;
    readonly demo_rollouts: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly demo_slice: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly demo_sliceAxis: (a: number, b: number, c: number) => [number, number];
    readonly demo_thetaTrue: (a: number) => [number, number];
    readonly demo_upperBounds: (a: number) => [number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __externref_table_dealloc: (a: number) => void;
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
