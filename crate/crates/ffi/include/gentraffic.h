#ifndef GENTRAFFIC_H
#define GENTRAFFIC_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum GtProtocol {
  GT_PROTOCOL_TCP_TLS = 0,
  GT_PROTOCOL_TCP_UNK = 1,
  GT_PROTOCOL_UDP_QUIC_TLS = 2,
  GT_PROTOCOL_UDP_UNK = 3,
} GtProtocol;

typedef enum GtRateMetric {
  GT_RATE_METRIC_DOWN_BYTES = 0,
  GT_RATE_METRIC_UP_BYTES = 1,
  GT_RATE_METRIC_DOWN_PKTS = 2,
  GT_RATE_METRIC_UP_PKTS = 3,
} GtRateMetric;

typedef enum GtStatus {
  GT_STATUS_OK = 0,
  GT_STATUS_NULL_ARGUMENT = 1,
  GT_STATUS_INVALID_ARGUMENT = 2,
  GT_STATUS_IO = 3,
  GT_STATUS_PARSE = 4,
  GT_STATUS_OUT_OF_RANGE = 5,
  GT_STATUS_BUFFER_TOO_SMALL = 6,
  GT_STATUS_NO_DATA = 7,
  GT_STATUS_PANIC = 99,
} GtStatus;

typedef enum GtTlsVersion {
  GT_TLS_VERSION_NONE = 0,
  GT_TLS_VERSION_TLS12 = 1,
  GT_TLS_VERSION_TLS13 = 2,
  GT_TLS_VERSION_OTHER = 3,
  GT_TLS_VERSION_UNKNOWN = 4,
} GtTlsVersion;

typedef struct GtClassifier GtClassifier;

typedef struct GtFlows GtFlows;

typedef struct GtModel GtModel;

typedef struct GtTrace GtTrace;

// Per-biflow counters.
typedef struct GtFlowInfo {
  // 6 for TCP, 17 for UDP.
  uint8_t ip_proto;
  uint64_t packets;
  uint64_t up_packets;
  uint64_t down_packets;
  uint64_t up_bytes;
  uint64_t down_bytes;
  uint64_t first_ts_us;
  uint64_t last_ts_us;
} GtFlowInfo;

typedef struct GtDissection {
  enum GtProtocol protocol;
  enum GtTlsVersion version;
  bool via_quic;
  bool has_sni;
  // Offset and length of the server_name extension in the flow's
  // payload stream; zero when absent.
  size_t sni_offset;
  size_t sni_len;
} GtDissection;

typedef struct GtRateStats {
  uint64_t windows;
  double min;
  double q1;
  double median;
  double q3;
  double max;
  double mean;
} GtRateStats;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or NULL. Valid until
// the next call on the same thread.
const char *gt_last_error(void);

// Library version as a static NUL-terminated string.
const char *gt_version(void);

// # Safety
// `path` must be a NUL-terminated string and `trace_out` writable.
enum GtStatus gt_trace_open(const char *path, struct GtTrace **trace_out);

// # Safety
// `trace` must come from [`gt_trace_open`] or be NULL.
void gt_trace_free(struct GtTrace *trace);

// # Safety
// Pointers must be valid.
enum GtStatus gt_trace_packet_count(const struct GtTrace *trace, size_t *count_out);

// Groups the trace's packets into biflows.
//
// # Safety
// Pointers must be valid.
enum GtStatus gt_flows_assemble(const struct GtTrace *trace, struct GtFlows **flows_out);

// # Safety
// `flows` must come from [`gt_flows_assemble`] or be NULL.
void gt_flows_free(struct GtFlows *flows);

// # Safety
// Pointers must be valid.
enum GtStatus gt_flows_count(const struct GtFlows *flows, size_t *count_out);

// Labels biflows from a TOML label file.
//
// # Safety
// Pointers must be valid; `path` NUL-terminated.
enum GtStatus gt_flows_apply_labels(struct GtFlows *flows, const char *path);

// # Safety
// Pointers must be valid.
enum GtStatus gt_flow_info(const struct GtFlows *flows, size_t index, struct GtFlowInfo *info_out);

// Copies the flow's app label into `buf`; `needed` receives the size
// including the terminating NUL.
//
// # Safety
// `buf` must hold `cap` bytes; other pointers valid or NULL where noted.
enum GtStatus gt_flow_app(const struct GtFlows *flows,
                          size_t index,
                          char *buf,
                          size_t cap,
                          size_t *needed);

// Protocol label and TLS metadata of one biflow.
//
// # Safety
// Pointers must be valid.
enum GtStatus gt_flow_dissect(struct GtFlows *flows, size_t index, struct GtDissection *out_info);

// Copies the biflow's SNI into `buf`. Fails with `NoData` when the flow
// has none.
//
// # Safety
// `buf` must hold `cap` bytes; other pointers valid or NULL where noted.
enum GtStatus gt_flow_sni(struct GtFlows *flows,
                          size_t index,
                          char *buf,
                          size_t cap,
                          size_t *needed);

// Windowed-rate statistics over all biflows, in units per second.
//
// # Safety
// Pointers must be valid.
enum GtStatus gt_flows_rate_stats(const struct GtFlows *flows,
                                  double delta_s,
                                  enum GtRateMetric metric,
                                  struct GtRateStats *stats_out);

// Fits a Markov chain with `k` payload-length bins over all biflows.
//
// # Safety
// Pointers must be valid.
enum GtStatus gt_markov_fit(const struct GtFlows *flows,
                            size_t k,
                            uint64_t seed,
                            struct GtModel **model_out);

// Loads a model file written by `gentraffic markov fit`.
//
// # Safety
// `path` NUL-terminated; `model_out` writable.
enum GtStatus gt_markov_load(const char *path, struct GtModel **model_out);

// # Safety
// `model` must come from a `gt_markov_*` constructor or be NULL.
void gt_markov_free(struct GtModel *model);

// Number of payload-length bins; the chain has twice as many states.
//
// # Safety
// Pointers must be valid.
enum GtStatus gt_markov_bins(const struct GtModel *model, size_t *k_out);

// Transition probability between state indices.
//
// # Safety
// Pointers must be valid.
enum GtStatus gt_markov_transition(const struct GtModel *model,
                                   size_t from,
                                   size_t to,
                                   double *p_out);

// Samples `len` packets into `pl` and `dir` (-1 up, +1 down), which
// must each hold `len` elements.
//
// # Safety
// `pl` and `dir` must point to `len` writable elements.
enum GtStatus gt_markov_generate(const struct GtModel *model,
                                 size_t len,
                                 uint64_t seed,
                                 uint32_t *pl,
                                 int8_t *dir);

// Loads a classifier checkpoint.
//
// # Safety
// `path` NUL-terminated; `out_clf` writable.
enum GtStatus gt_classifier_load(const char *path, struct GtClassifier **out_clf);

// # Safety
// `clf` must come from [`gt_classifier_load`] or be NULL.
void gt_classifier_free(struct GtClassifier *clf);

// # Safety
// Pointers must be valid.
enum GtStatus gt_classifier_class_count(const struct GtClassifier *clf, size_t *count_out);

// Class name owned by the classifier; valid until it is freed.
//
// # Safety
// Pointers must be valid.
enum GtStatus gt_classifier_class_name(const struct GtClassifier *clf,
                                       size_t index,
                                       const char **name_out);

// Classifies a payload prefix; bytes past the input window are ignored
// and shorter inputs are zero-padded.
//
// # Safety
// `bytes` must point to `len` readable bytes (may be NULL when `len` is 0).
enum GtStatus gt_classifier_predict(const struct GtClassifier *clf,
                                    const uint8_t *bytes,
                                    size_t len,
                                    size_t *class_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GENTRAFFIC_H */
