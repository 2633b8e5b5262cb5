/*
 * Seeded-fault library. Each fault is real: invalid stores, abort(),
 * integer division by zero and an infinite loop. Edge numbering matches
 * builtin:seeded so results can be compared across the two.
 */
#include <stdint.h>
#include <stdlib.h>
#include <string.h>

#include "cov.h"

#define EXPORT __attribute__((visibility("default")))

struct state {
    int64_t mode;
    int64_t uses;
    int64_t *slot;
    struct state *next;
};

static struct state *registry;

static int64_t arg_int(const isoh_value *args, uint32_t nargs, uint32_t i)
{
    return i < nargs && args[i].tag == ISOH_INT ? args[i].i : 0;
}

static struct state *arg_state(const isoh_value *args, uint32_t nargs, uint32_t i)
{
    if (i >= nargs || args[i].tag != ISOH_HANDLE)
        return NULL;
    for (struct state *s = registry; s; s = s->next)
        if (s == args[i].handle)
            return s;
    return NULL;
}

EXPORT int32_t seeded_setup(void)
{
    registry = NULL;
    return 0;
}

EXPORT int32_t seeded_teardown(void)
{
    while (registry) {
        struct state *next = registry->next;
        free(registry->slot);
        free(registry);
        registry = next;
    }
    return 0;
}

EXPORT int32_t crash_segv(const isoh_value *args, uint32_t nargs, isoh_value *ret)
{
    (void)args;
    (void)nargs;
    (void)ret;
    edge_hit(0);
    volatile int *p = (volatile int *)(uintptr_t)0x10;
    *p = 1;
    return 0;
}

EXPORT int32_t checked_abort(const isoh_value *args, uint32_t nargs, isoh_value *ret)
{
    (void)ret;
    edge_hit(1);
    if (arg_int(args, nargs, 0) < 0) {
        edge_hit(2);
        abort();
    }
    edge_hit(3);
    return 0;
}

EXPORT int32_t fpe_div(const isoh_value *args, uint32_t nargs, isoh_value *ret)
{
    edge_hit(4);
    volatile int64_t x = arg_int(args, nargs, 0);
    volatile int64_t d = arg_int(args, nargs, 1);
    if (d == 0)
        edge_hit(5);
    else
        edge_hit(6);
    ret->tag = ISOH_INT;
    ret->i = x / d;
    return 0;
}

EXPORT int32_t make_state(const isoh_value *args, uint32_t nargs, isoh_value *ret)
{
    (void)args;
    (void)nargs;
    edge_hit(7);
    struct state *s = calloc(1, sizeof *s);
    if (!s)
        return 2;
    s->slot = calloc(1, sizeof *s->slot);
    s->next = registry;
    registry = s;
    ret->tag = ISOH_HANDLE;
    ret->handle = s;
    return 0;
}

EXPORT int32_t set_mode(const isoh_value *args, uint32_t nargs, isoh_value *ret)
{
    (void)ret;
    edge_hit(8);
    struct state *s = arg_state(args, nargs, 0);
    if (!s)
        return 1;
    int64_t mode = arg_int(args, nargs, 1);
    if (mode == 3) {
        edge_hit(9);
        /* Mode 3 drops the slot but keeps using it. */
        free(s->slot);
        s->slot = NULL;
    } else {
        edge_hit(10);
    }
    s->mode = mode;
    return 0;
}

EXPORT int32_t use_state(const isoh_value *args, uint32_t nargs, isoh_value *ret)
{
    edge_hit(11);
    struct state *s = arg_state(args, nargs, 0);
    if (!s)
        return 1;
    if (s->mode == 3)
        edge_hit(12);
    volatile int64_t *slot = s->slot;
    *slot += 1;
    int64_t n = arg_int(args, nargs, 1);
    edge_hit(n > 5 ? 13 : 14);
    s->uses += 1;
    ret->tag = ISOH_INT;
    ret->i = n * s->uses;
    return 0;
}

EXPORT int32_t spin_forever(const isoh_value *args, uint32_t nargs, isoh_value *ret)
{
    (void)args;
    (void)nargs;
    (void)ret;
    edge_hit(15);
    volatile uint64_t n = 0;
    for (;;)
        n++;
    return 0;
}

EXPORT int32_t validated_sum(const isoh_value *args, uint32_t nargs, isoh_value *ret)
{
    edge_hit(16);
    const uint8_t *buf = nargs > 0 && args[0].tag == ISOH_BYTES ? args[0].bytes : NULL;
    uint64_t cap = buf ? args[0].len : 0;
    int64_t len = arg_int(args, nargs, 1);
    if (len < 0 || (uint64_t)len > cap) {
        edge_hit(17);
        return 1;
    }
    ret->tag = ISOH_INT;
    if (len == 0) {
        edge_hit(18);
        ret->i = 0;
        return 0;
    }
    int64_t sum = 0;
    for (int64_t i = 0; i < len; i++) {
        edge_hit(buf[i] >= 128 ? 19 : 20);
        if (buf[i] == 0)
            edge_hit(21);
        sum += buf[i];
    }
    if (sum > 1000)
        edge_hit(22);
    edge_hit(len % 2 == 0 ? 23 : 24);
    if (len == 16)
        edge_hit(25);
    ret->i = sum;
    return 0;
}
