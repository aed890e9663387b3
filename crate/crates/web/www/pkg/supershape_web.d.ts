/* tslint:disable */
/* eslint-disable */

export class Rendered {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    readonly activeVoxels: number;
    /**
     * Binary STL bytes.
     */
    readonly stl: Uint8Array;
    readonly triangles: number;
}

/**
 * The builtin genomes as a JSON array of `{name, description, genome}`.
 */
export function builtins(): string;

/**
 * Returns the mutated genome as JSON.
 */
export function mutate(genome_json: string, seed: bigint): string;

export function render(genome_json: string, turbine: boolean, smooth: number): Rendered;

export function targetMatch(genome_json: string, target: string): number;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_rendered_free: (a: number, b: number) => void;
    readonly builtins: () => [number, number];
    readonly mutate: (a: number, b: number, c: bigint) => [number, number, number, number];
    readonly render: (a: number, b: number, c: number, d: number) => [number, number, number];
    readonly rendered_activeVoxels: (a: number) => number;
    readonly rendered_stl: (a: number) => [number, number];
    readonly rendered_triangles: (a: number) => number;
    readonly targetMatch: (a: number, b: number, c: number, d: number) => [number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
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
