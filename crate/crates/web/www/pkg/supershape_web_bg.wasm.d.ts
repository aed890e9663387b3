/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_rendered_free: (a: number, b: number) => void;
export const builtins: () => [number, number];
export const mutate: (a: number, b: number, c: bigint) => [number, number, number, number];
export const render: (a: number, b: number, c: number, d: number) => [number, number, number];
export const rendered_activeVoxels: (a: number) => number;
export const rendered_stl: (a: number) => [number, number];
export const rendered_triangles: (a: number) => number;
export const targetMatch: (a: number, b: number, c: number, d: number) => [number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_start: () => void;
