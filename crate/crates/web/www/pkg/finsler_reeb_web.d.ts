/* tslint:disable */
/* eslint-disable */

/**
 * Chart rectangle `[lo1, lo2, hi1, hi2]`.
 */
export function chart_bounds(metric_toml: string): Float64Array;

/**
 * Classified closed-orbit catalog as JSON, the same document the command
 * line tool writes to `catalog.json`.
 */
export function classify_orbits(metric_toml: string): string;

/**
 * Unit circle of the norm and of its dual at `q`, interleaved as
 * `x0, y0, x1, y1, ...`: the first `n` points lie on `{F = 1}`, the next
 * `n` are their Legendre images on `{F* = 1}`.
 */
export function indicatrix(metric_toml: string, q1: number, q2: number, n: number): Float64Array;

/**
 * Chart polyline `x0, y0, x1, y1, ...` of the Reeb trajectory leaving `q`
 * in the direction `v`. Coordinates are not wrapped.
 */
export function trajectory(metric_toml: string, q1: number, q2: number, v1: number, v2: number, duration: number): Float64Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly chart_bounds: (a: number, b: number) => [number, number, number, number];
    readonly classify_orbits: (a: number, b: number) => [number, number, number, number];
    readonly indicatrix: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly trajectory: (a: number, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
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
