#ifndef BPFSYNTH_H
#define BPFSYNTH_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum {
  BPF_STATUS_OK = 0,
  BPF_STATUS_NULL_ARGUMENT = 1,
  BPF_STATUS_INVALID_UTF8 = 2,
  BPF_STATUS_PARSE_ERROR = 3,
  BPF_STATUS_IO_ERROR = 4,
  BPF_STATUS_CONTRACT_ERROR = 5,
  BPF_STATUS_UNSUPPORTED = 6,
  BPF_STATUS_SAFETY_ERROR = 7,
  BPF_STATUS_OUT_OF_RANGE = 8,
  BPF_STATUS_PANIC = 9,
} BpfStatus;

typedef enum {
  BPF_VERDICT_VERIFIED = 0,
  BPF_VERDICT_ASSERT_VIOLATION = 1,
  BPF_VERDICT_TIMEOUT = 2,
  BPF_VERDICT_SOLVER_ERROR = 3,
} BpfVerdict;

/**
 * A loaded contract store.
 */
typedef struct BpfContracts BpfContracts;

/**
 * A parsed program.
 */
typedef struct BpfProgram BpfProgram;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *bpf_last_error(void);

void bpf_string_free(char *s);

BpfStatus bpf_program_parse(const char *source, BpfProgram **out);

void bpf_program_free(BpfProgram *p);

/**
 * Canonical text of the program.
 */
BpfStatus bpf_program_render(const BpfProgram *p, char **out);

/**
 * Number of attach points over all clauses; 0 for NULL.
 */
size_t bpf_program_probe_count(const BpfProgram *p);

/**
 * Key (`kind:target`) of the attach point at `index`.
 */
BpfStatus bpf_program_probe_at(const BpfProgram *p, size_t index, char **out);

/**
 * Number of `assume`/`assert` statements; 0 for NULL.
 */
size_t bpf_program_annotation_count(const BpfProgram *p);

/**
 * A copy of the program without `assume`/`assert` statements.
 */
BpfStatus bpf_program_strip(const BpfProgram *p, BpfProgram **out);

BpfStatus bpf_contracts_load(const char *path, BpfContracts **out);

BpfStatus bpf_contracts_from_json(const char *json, BpfContracts **out);

size_t bpf_contracts_len(const BpfContracts *c);

void bpf_contracts_free(BpfContracts *c);

/**
 * Symbolically verify a program with default options.
 *
 * A program that already has annotations is verified as is. Otherwise,
 * when `contracts` is not NULL, annotations are derived from it first.
 * `line` receives the failing line for a violation and 0 otherwise;
 * `message` (optional) receives a description of the verdict.
 */
BpfStatus bpf_verify(const BpfProgram *p,
                     const BpfContracts *contracts,
                     BpfVerdict *verdict,
                     uint32_t *line,
                     char **message);

/**
 * Run the built-in safety gate on the program with annotations removed.
 * `ok` receives the decision; `message` (optional) the findings, one per
 * line.
 */
BpfStatus bpf_safety_check(const BpfProgram *p, bool *ok, char **message);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BPFSYNTH_H */
