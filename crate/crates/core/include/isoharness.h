/* Calling convention for native targets loaded by isoharness. */
#ifndef ISOHARNESS_H
#define ISOHARNESS_H

#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

enum {
    ISOH_NULL = 0,
    ISOH_INT = 1,
    ISOH_FLOAT = 2,
    ISOH_BYTES = 3,
    ISOH_HANDLE = 4
};

/* One argument or return value. Only the member matching `tag` is meaningful. */
typedef struct isoh_value {
    int32_t tag;
    int32_t reserved;
    int64_t i;
    double f;
    const uint8_t *bytes;
    uint64_t len;
    void *handle;
} isoh_value;

/*
 * Every function named in a manifest has this signature. Return 0 on
 * success and fill *ret according to the declared return kind; any other
 * value is reported as a managed error. Enum parameters arrive as ISOH_INT.
 */
typedef int32_t (*isoh_entry)(const isoh_value *args, uint32_t nargs, isoh_value *ret);

/* Optional setup/teardown hooks named in the manifest, run around each test. */
typedef int32_t (*isoh_hook)(void);

/*
 * Optional export. Called before each test with the edge-counter array,
 * which lives in shared memory and outlives the process if it crashes.
 */
void isoharness_attach(uint64_t *counters, uint64_t n_edges);

#ifdef __cplusplus
}
#endif

#endif
