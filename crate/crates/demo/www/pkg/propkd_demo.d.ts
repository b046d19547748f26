/* tslint:disable */
/* eslint-disable */

/**
 * Synthetic news graph `A = E Eᵀ`, the retention mask of an untrained
 * refiner and the normalized propagation matrix, all row-major.
 */
export function global_graph(n_news: number, q_in: number, q_out: number, seed: bigint): string;

/**
 * Loss breakdown for 32 random news when the student's outputs are a blend
 * of the propagation teacher's (weight `agreement`) and Gaussian noise.
 */
export function loss_terms(lambda: number, beta: number, rho: number, agreement: number, seed: bigint): string;

/**
 * Ten small propagation trees before and after noise injection.
 */
export function noise_preview(kind: string, ratio: number, seed: bigint): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly global_graph: (a: number, b: number, c: number, d: bigint) => [number, number];
    readonly loss_terms: (a: number, b: number, c: number, d: number, e: bigint) => [number, number];
    readonly noise_preview: (a: number, b: number, c: number, d: bigint) => [number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
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
