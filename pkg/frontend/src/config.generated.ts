// Generated by build.mjs; the default targets a same-origin service.
// Do not edit by hand. Set SPRAG_API_BASE at build time to change it.
export const GENERATED_API_BASE = "/api/v1";
