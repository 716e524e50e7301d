"""Generated C runtime surface: the abstract platform API header, per-target
binding declarations, the tile-copy helper, and the instrumented host test
backend (byte-accurate copies, reference kernels, per-layer copy counters).
"""

from __future__ import annotations

from .target import TargetModel

API_HEADER_NAME = "match_api.h"
BINDINGS_HEADER_NAME = "match_bindings.h"
TILE_HEADER_NAME = "match_tile.h"
BACKEND_SOURCE_NAME = "match_test_backend.c"

_CTX_STRUCTS = """\
typedef struct {
    const int8_t *in;
    const int8_t *wt;
    int32_t *acc;
    /* L1 box geometry, canonical dims; strides in elements */
    int in_lo_c, in_lo_y, in_lo_x;
    long in_s_c, in_s_y, in_s_x;
    int wt_lo_k, wt_lo_c, wt_lo_fy, wt_lo_fx;
    long wt_s_k, wt_s_c, wt_s_fy, wt_s_fx;
    int acc_lo_k, acc_lo_y, acc_lo_x;
    long acc_s_k, acc_s_y, acc_s_x;
    /* compute block (global, clamped) */
    int k0, k1, c0, c1, oy0, oy1, ox0, ox1, fy0, fy1, fx0, fx1;
    /* layer geometry */
    int iy, ix, sy, sx, pt, pl, dy, dx, cpg, kpg;
} match_conv_ctx_t;

typedef struct {
    const int8_t *a;
    const int8_t *b;
    int32_t *acc;
    int a_lo_c, a_lo_y, a_lo_x;
    long a_s_c, a_s_y, a_s_x;
    int b_lo_c, b_lo_y, b_lo_x;
    long b_s_c, b_s_y, b_s_x;
    int acc_lo_c, acc_lo_y, acc_lo_x;
    long acc_s_c, acc_s_y, acc_s_x;
    int c0, c1, oy0, oy1, ox0, ox1;
} match_add_ctx_t;
"""

CTX_FAMILY = {"conv2d": "match_conv_ctx_t", "dense": "match_conv_ctx_t",
              "add": "match_add_ctx_t"}


def pattern_ctx_type(anchor_op: str) -> str:
    return CTX_FAMILY[anchor_op]


def emit_api_header(target: TargetModel) -> str:
    """match_api.h: fixed generic signatures plus the per-pattern kernel
    entry points of this target's modules."""
    lines = [
        "#ifndef MATCH_API_H",
        "#define MATCH_API_H",
        "",
        "#include <stdint.h>",
        "",
        "/* Platform APIs */",
        "void match_platform_init(void);",
        "void match_platform_close(void);",
        "void match_trace_copy(const char *layer, const char *operand);",
        "",
        "/* Memory APIs */",
        "void *match_mem_alloc_l1(unsigned bytes);",
        "void match_mem_free_l1(void *p);",
        "void match_mem_copy(void *dst, const void *src, unsigned bytes, unsigned chunks,",
        "                    unsigned chunk_stride_src, unsigned chunk_stride_dst);",
        "",
        "/* Synchronization APIs */",
        "void match_sync_transfers(void);",
        "void match_sync_compute(void);",
        "",
        "/* Computational APIs: per-pattern kernels over plain context structs */",
        _CTX_STRUCTS,
    ]
    seen = set()
    for module in target.modules:
        for p in module.patterns:
            if p.name in seen:
                continue
            seen.add(p.name)
            lines.append(f"void match_kernel_{p.name}(const {pattern_ctx_type(p.ops[0])} *ctx);")
    lines += ["", "#endif /* MATCH_API_H */", ""]
    return "\n".join(lines)


def emit_bindings_header(target: TargetModel) -> str:
    """Target-bound names with the generic signatures; the layer templates
    call these after textual substitution."""
    sig_by_generic = {
        "match_platform_init": "void {}(void);",
        "match_platform_close": "void {}(void);",
        "match_trace_copy": "void {}(const char *layer, const char *operand);",
        "match_mem_alloc_l1": "void *{}(unsigned bytes);",
        "match_mem_free_l1": "void {}(void *p);",
        "match_mem_copy": ("void {}(void *dst, const void *src, unsigned bytes, "
                           "unsigned chunks, unsigned chunk_stride_src, unsigned chunk_stride_dst);"),
        "match_sync_transfers": "void {}(void);",
        "match_sync_compute": "void {}(void);",
    }
    lines = [
        "#ifndef MATCH_BINDINGS_H",
        "#define MATCH_BINDINGS_H",
        "",
        f'#include "{API_HEADER_NAME}"',
        "",
    ]
    seen = set()
    for module in target.modules:
        lines.append(f"/* module {module.name} */")
        for family in ("platform", "mem", "sync"):
            for generic, bound in sorted(module.api_bindings.get(family, {}).items()):
                if bound in seen:
                    continue
                seen.add(bound)
                lines.append(sig_by_generic[generic].format(bound))
        for generic, bound in sorted(module.api_bindings.get("compute", {}).items()):
            if bound in seen:
                continue
            seen.add(bound)
            pname = generic.removeprefix("match_kernel_")
            anchor = module.pattern(pname).ops[0]
            lines.append(f"void {bound}(const {pattern_ctx_type(anchor)} *ctx);")
        lines.append("")
    lines += ["#endif /* MATCH_BINDINGS_H */", ""]
    return "\n".join(lines)


TILE_HEADER = """\
#ifndef MATCH_TILE_H
#define MATCH_TILE_H

#include <stdint.h>
#include "match_api.h"

/* Rectangular tile of a parent tensor: box extents (clamped at the layer
 * edges), parent strides, and the contiguous tail (dims [tail..ndim) are one
 * run in parent memory). Strides/extents in elements. */
typedef struct {
    long src_off;
    int ndim;
    int ext[4];
    int lo[4];      /* global origin of the box, per storage dim */
    long pstr[4];
    long bstr[4];
    int tail;
    long run;
    long box_elems;
} match_tile_geom_t;

/* Move one tile between the parent tensor and a packed L1 box through the
 * 2-D strided copy API; tiles with more than two loose dims take several
 * strided sub-copies, like a DMA driver would issue. */
static inline void match_tile_move(void *l1, void *parent, const match_tile_geom_t *g,
                                   int elem, int to_l1, void (*copy)(void *, const void *,
                                   unsigned, unsigned, unsigned, unsigned))
{
    long run_b = g->run * elem;
    int n0 = g->tail > 0 ? g->ext[0] : 1;
    int n1 = g->tail > 1 ? g->ext[1] : 1;
    int n2 = g->tail > 2 ? g->ext[2] : 1;
    int fold = g->tail - 1; /* innermost loose dim folds into the chunk args */
    if (fold == 0) { n0 = 1; }
    if (fold == 1) { n1 = 1; }
    if (fold == 2) { n2 = 1; }
    unsigned chunks = fold >= 0 ? (unsigned)g->ext[fold] : 1u;
    long pstep = fold >= 0 ? g->pstr[fold] * elem : 0;
    long bstep = fold >= 0 ? g->bstr[fold] * elem : 0;
    for (int i0 = 0; i0 < n0; ++i0)
        for (int i1 = 0; i1 < n1; ++i1)
            for (int i2 = 0; i2 < n2; ++i2) {
                long poff = (g->src_off + i0 * g->pstr[0] + i1 * g->pstr[1]
                             + i2 * g->pstr[2]) * elem;
                long boff = (i0 * g->bstr[0] + i1 * g->bstr[1] + i2 * g->bstr[2]) * elem;
                char *box = (char *)l1 + boff;
                char *par = (char *)parent + poff;
                if (to_l1)
                    copy(box, par, (unsigned)(run_b * chunks), chunks,
                         (unsigned)pstep, (unsigned)bstep);
                else
                    copy(par, box, (unsigned)(run_b * chunks), chunks,
                         (unsigned)bstep, (unsigned)pstep);
            }
}

#endif /* MATCH_TILE_H */
"""


def emit_test_backend(target: TargetModel) -> str:
    """Host implementation of every generic and bound API: real byte copies,
    per-layer per-operand copy counters, reference kernels, counter dump at
    platform close."""
    lines = [
        "#include <stdio.h>",
        "#include <stdlib.h>",
        "#include <string.h>",
        f'#include "{API_HEADER_NAME}"',
        f'#include "{BINDINGS_HEADER_NAME}"',
        "",
        "#define MAX_LAYERS 512",
        "",
        "typedef struct { char name[96]; long copies[3]; } layer_counts_t;",
        "static layer_counts_t counters[MAX_LAYERS];",
        "static int n_layers = 0;",
        "static long sync_transfer_events = 0;",
        "static long sync_compute_events = 0;",
        "static int init_depth = 0;",
        "",
        "static int operand_slot(const char *operand)",
        "{",
        '    if (operand[0] == \'I\') return 0;',
        '    if (operand[0] == \'W\') return 1;',
        "    return 2;",
        "}",
        "",
        "static void dump_counters(void)",
        "{",
        '    const char *path = getenv("MATCH_COUNTERS_PATH");',
        '    FILE *f = fopen(path ? path : "match_counters.json", "w");',
        "    if (!f) return;",
        '    fputs("{", f);',
        "    for (int i = 0; i < n_layers; ++i) {",
        '        fprintf(f, "%s\\n \\"%s\\": {\\"I\\": %ld, \\"W\\": %ld, \\"O\\": %ld}",',
        '                i ? "," : "", counters[i].name,',
        "                counters[i].copies[0], counters[i].copies[1], counters[i].copies[2]);",
        "    }",
        '    fputs("\\n}\\n", f);',
        "    fclose(f);",
        "}",
        "",
        "void match_platform_init(void) { ++init_depth; }",
        "",
        "void match_platform_close(void)",
        "{",
        "    if (init_depth > 0) --init_depth;",
        "    dump_counters();",
        "}",
        "",
        "void match_trace_copy(const char *layer, const char *operand)",
        "{",
        "    for (int i = 0; i < n_layers; ++i) {",
        "        if (!strcmp(counters[i].name, layer)) {",
        "            counters[i].copies[operand_slot(operand)]++;",
        "            return;",
        "        }",
        "    }",
        "    if (n_layers < MAX_LAYERS) {",
        "        snprintf(counters[n_layers].name, sizeof(counters[n_layers].name), \"%s\", layer);",
        "        counters[n_layers].copies[operand_slot(operand)] = 1;",
        "        ++n_layers;",
        "    }",
        "}",
        "",
        "void *match_mem_alloc_l1(unsigned bytes) { return malloc(bytes ? bytes : 1); }",
        "void match_mem_free_l1(void *p) { free(p); }",
        "",
        "void match_mem_copy(void *dst, const void *src, unsigned bytes, unsigned chunks,",
        "                    unsigned chunk_stride_src, unsigned chunk_stride_dst)",
        "{",
        "    unsigned run = chunks ? bytes / chunks : bytes;",
        "    for (unsigned i = 0; i < chunks; ++i)",
        "        memcpy((char *)dst + (size_t)i * chunk_stride_dst,",
        "               (const char *)src + (size_t)i * chunk_stride_src, run);",
        "}",
        "",
        "void match_sync_transfers(void) { ++sync_transfer_events; }",
        "void match_sync_compute(void) { ++sync_compute_events; }",
        "",
        "/* reference kernels: plain accumulation, bit-exact with the oracle */",
        "static void conv_accumulate(const match_conv_ctx_t *c)",
        "{",
        "    for (int k = c->k0; k < c->k1; ++k)",
        "        for (int oy = c->oy0; oy < c->oy1; ++oy)",
        "            for (int ox = c->ox0; ox < c->ox1; ++ox) {",
        "                int32_t *acc = c->acc + (k - c->acc_lo_k) * c->acc_s_k",
        "                             + (oy - c->acc_lo_y) * c->acc_s_y",
        "                             + (ox - c->acc_lo_x) * c->acc_s_x;",
        "                int32_t sum = 0;",
        "                for (int ci = c->c0; ci < c->c1; ++ci) {",
        "                    if (ci / c->cpg != k / c->kpg)",
        "                        continue;",
        "                    for (int fy = c->fy0; fy < c->fy1; ++fy)",
        "                        for (int fx = c->fx0; fx < c->fx1; ++fx) {",
        "                            int yy = oy * c->sy + fy * c->dy - c->pt;",
        "                            int xx = ox * c->sx + fx * c->dx - c->pl;",
        "                            int8_t v = 0;",
        "                            if (yy >= 0 && yy < c->iy && xx >= 0 && xx < c->ix)",
        "                                v = c->in[(ci - c->in_lo_c) * c->in_s_c",
        "                                        + (yy - c->in_lo_y) * c->in_s_y",
        "                                        + (xx - c->in_lo_x) * c->in_s_x];",
        "                            int8_t w = c->wt[(k - c->wt_lo_k) * c->wt_s_k",
        "                                           + (ci % c->cpg - c->wt_lo_c) * c->wt_s_c",
        "                                           + (fy - c->wt_lo_fy) * c->wt_s_fy",
        "                                           + (fx - c->wt_lo_fx) * c->wt_s_fx];",
        "                            sum += (int32_t)v * (int32_t)w;",
        "                        }",
        "                }",
        "                *acc += sum;",
        "            }",
        "}",
        "",
        "static void add_accumulate(const match_add_ctx_t *c)",
        "{",
        "    for (int ch = c->c0; ch < c->c1; ++ch)",
        "        for (int oy = c->oy0; oy < c->oy1; ++oy)",
        "            for (int ox = c->ox0; ox < c->ox1; ++ox) {",
        "                int32_t va = c->a[(ch - c->a_lo_c) * c->a_s_c",
        "                                + (oy - c->a_lo_y) * c->a_s_y",
        "                                + (ox - c->a_lo_x) * c->a_s_x];",
        "                int32_t vb = c->b[(ch - c->b_lo_c) * c->b_s_c",
        "                                + (oy - c->b_lo_y) * c->b_s_y",
        "                                + (ox - c->b_lo_x) * c->b_s_x];",
        "                c->acc[(ch - c->acc_lo_c) * c->acc_s_c",
        "                     + (oy - c->acc_lo_y) * c->acc_s_y",
        "                     + (ox - c->acc_lo_x) * c->acc_s_x] = va + vb;",
        "            }",
        "}",
        "",
    ]
    emitted = set()
    for module in target.modules:
        for p in module.patterns:
            impl = "conv_accumulate" if p.ops[0] in ("conv2d", "dense") else "add_accumulate"
            ctx = pattern_ctx_type(p.ops[0])
            if p.name not in emitted:
                emitted.add(p.name)
                lines.append(f"void match_kernel_{p.name}(const {ctx} *ctx) {{ {impl}(ctx); }}")
    lines.append("")
    lines.append("/* bound names used by the generated layers */")
    bound_done = set()
    delegate = {
        "match_platform_init": "match_platform_init();",
        "match_platform_close": "match_platform_close();",
        "match_trace_copy": "match_trace_copy(layer, operand);",
        "match_mem_free_l1": "match_mem_free_l1(p);",
        "match_sync_transfers": "match_sync_transfers();",
        "match_sync_compute": "match_sync_compute();",
    }
    sig = {
        "match_platform_init": "void {}(void)",
        "match_platform_close": "void {}(void)",
        "match_trace_copy": "void {}(const char *layer, const char *operand)",
        "match_mem_alloc_l1": "void *{}(unsigned bytes)",
        "match_mem_free_l1": "void {}(void *p)",
        "match_mem_copy": ("void {}(void *dst, const void *src, unsigned bytes, unsigned chunks, "
                           "unsigned chunk_stride_src, unsigned chunk_stride_dst)"),
        "match_sync_transfers": "void {}(void)",
        "match_sync_compute": "void {}(void)",
    }
    for module in target.modules:
        for family in ("platform", "mem", "sync"):
            for generic, bound in sorted(module.api_bindings.get(family, {}).items()):
                if bound in bound_done or bound == generic:
                    continue
                bound_done.add(bound)
                if generic == "match_mem_alloc_l1":
                    body = "return match_mem_alloc_l1(bytes);"
                elif generic == "match_mem_copy":
                    body = "match_mem_copy(dst, src, bytes, chunks, chunk_stride_src, chunk_stride_dst);"
                else:
                    body = delegate[generic]
                lines.append(f"{sig[generic].format(bound)} {{ {body} }}")
        for generic, bound in sorted(module.api_bindings.get("compute", {}).items()):
            if bound in bound_done or bound == generic:
                continue
            bound_done.add(bound)
            pname = generic.removeprefix("match_kernel_")
            ctx = pattern_ctx_type(module.pattern(pname).ops[0])
            lines.append(f"void {bound}(const {ctx} *ctx) {{ {generic}(ctx); }}")
    lines.append("")
    return "\n".join(lines)
