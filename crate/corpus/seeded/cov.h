/* Edge-coverage shim. Include once per target; it defines isoharness_attach. */
#ifndef SEEDED_COV_H
#define SEEDED_COV_H

#include <stdint.h>
#include <stdio.h>

#include "isoharness.h"

static uint64_t *cov_counters;
static uint64_t cov_edges;
static uint64_t cov_dropped;
static int cov_warned;

__attribute__((visibility("default")))
void isoharness_attach(uint64_t *counters, uint64_t n_edges)
{
    cov_counters = counters;
    cov_edges = n_edges;
}

/* Hits dropped because the shim was not attached or the index was out of range. */
__attribute__((visibility("default")))
uint64_t isoharness_cov_dropped(void)
{
    return cov_dropped;
}

static inline void edge_hit(uint64_t i)
{
    if (!cov_counters) {
        if (!cov_warned) {
            fputs("coverage shim not attached; edge hits are ignored\n", stderr);
            cov_warned = 1;
        }
        cov_dropped++;
        return;
    }
    if (i >= cov_edges) {
        cov_dropped++;
        return;
    }
    __atomic_fetch_add(&cov_counters[i], 1, __ATOMIC_RELAXED);
}

#endif
