/* vibnet: information-bottleneck gated networks, train / prune / analyze.
 *
 * Plain C interface over the C++ core. Every object is an opaque handle
 * released with its *_free function. Calls return a vib_status; on failure
 * vib_last_error() describes what went wrong on the calling thread.
 * Strings returned as const char* are owned by the handle they came from and
 * stay valid until the handle is freed or the same accessor is called again.
 */
#ifndef VIBNET_VIBNET_H
#define VIBNET_VIBNET_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define VIB_API __declspec(dllexport)
#else
#define VIB_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum vib_status {
  VIB_OK = 0,
  VIB_ERR_DIMENSION = 1,   /* shape mismatch */
  VIB_ERR_STATE = 2,       /* call sequence violated */
  VIB_ERR_INPUT = 3,       /* invalid argument */
  VIB_ERR_DOMAIN = 4,      /* argument outside the mathematical domain */
  VIB_ERR_PARSE = 5,       /* malformed file contents */
  VIB_ERR_IO = 6,          /* missing or unwritable file */
  VIB_ERR_CONFIG = 7,      /* bad config key or value; see vib_last_error_key */
  VIB_ERR_DEGENERATE = 8,  /* pruning would empty a layer */
  VIB_ERR_DIVERGED = 9,    /* training loss left the finite range */
  VIB_ERR_INTERNAL = 10
} vib_status;

VIB_API const char* vib_status_name(vib_status status);
VIB_API const char* vib_last_error(void);
/* Offending "section.key" after VIB_ERR_CONFIG, otherwise "". */
VIB_API const char* vib_last_error_key(void);
VIB_API const char* vib_version(void);

/* ---- configuration ------------------------------------------------------ */

typedef struct vib_config vib_config;

VIB_API vib_status vib_config_load(const char* path, vib_config** out);
VIB_API vib_status vib_config_parse(const char* text, vib_config** out);
/* Canonical text of every setting. */
VIB_API const char* vib_config_text(vib_config* cfg);
VIB_API const char* vib_config_architecture(const vib_config* cfg);
VIB_API const char* vib_config_out_dir(const vib_config* cfg);
VIB_API uint64_t vib_config_seed(const vib_config* cfg);
VIB_API size_t vib_config_checkpoint_every(const vib_config* cfg);
VIB_API size_t vib_config_fine_tune_epochs(const vib_config* cfg);
VIB_API double vib_config_prune_tau(const vib_config* cfg);
VIB_API int vib_config_prune_fold(const vib_config* cfg);
VIB_API void vib_config_free(vib_config* cfg);

/* ---- datasets ----------------------------------------------------------- */

typedef struct vib_dataset vib_dataset;

/* Train and test sets named by the config. `data_dir` may be NULL; it then
 * falls back to the config's data.dir and finally to $DATA_DIR. */
VIB_API vib_status vib_dataset_load(const vib_config* cfg, const char* data_dir, vib_dataset** train,
                                    vib_dataset** test);
/* Same, from the data tag stored in a checkpoint. */
VIB_API vib_status vib_dataset_load_tag(const char* tag, const char* data_dir, vib_dataset** train,
                                        vib_dataset** test);
/* Copies `n` rows of `features` doubles and their labels. */
VIB_API vib_status vib_dataset_create(const double* images, const int* labels, size_t n, size_t features,
                                      size_t num_classes, vib_dataset** out);
VIB_API size_t vib_dataset_size(const vib_dataset* data);
VIB_API size_t vib_dataset_features(const vib_dataset* data);
VIB_API void vib_dataset_free(vib_dataset* data);

/* ---- networks ----------------------------------------------------------- */

typedef struct vib_network vib_network;

/* Architectures: lenet_300_100, lenet_5, tiny_conv, toy_mlp:<w0>-<w1>-...[+input_gate][+no_bn]. */
VIB_API vib_status vib_network_build(const char* architecture, uint64_t seed, vib_network** out);
VIB_API vib_status vib_network_clone(const vib_network* net, vib_network** out);
VIB_API vib_status vib_network_load(const char* path, vib_network** out);
/* Writes a checkpoint with the network's seed, epoch and data tag. */
VIB_API vib_status vib_network_save(const vib_network* net, const char* path);
VIB_API void vib_network_set_meta(vib_network* net, uint64_t seed, uint32_t epoch, const char* data_tag);
VIB_API uint64_t vib_network_seed(const vib_network* net);
VIB_API uint32_t vib_network_epoch(const vib_network* net);
VIB_API const char* vib_network_data_tag(const vib_network* net);
VIB_API const char* vib_network_name(const vib_network* net);
/* Gated widths, e.g. "784-300-100". */
VIB_API const char* vib_network_widths(vib_network* net);
VIB_API size_t vib_network_input_features(const vib_network* net);
VIB_API size_t vib_network_output_width(const vib_network* net);
/* Compression relative to the architecture the network was built with. */
VIB_API vib_status vib_network_compression(const vib_network* net, double* r_w, double* flops, double* r_n,
                                           int* is_pruned);
/* Eval-mode forward of `n` rows; `out` receives n * output_width head
 * outputs (logits for classifiers). */
VIB_API vib_status vib_network_predict(const vib_network* net, const double* x, size_t n, size_t features,
                                       double* out);
VIB_API vib_status vib_network_error_rate(const vib_network* net, const vib_dataset* data, double* error);
VIB_API void vib_network_free(vib_network* net);

/* ---- training ----------------------------------------------------------- */

typedef struct vib_train_log vib_train_log;

/* Called after every epoch. A nonzero return stops with VIB_ERR_STATE. */
typedef int (*vib_epoch_callback)(void* user, const vib_network* net, size_t epoch);

/* Trains in place under the config's [train] settings; tracks I(h1; x) when
 * analysis.mi_track is set. `test` and `callback` may be NULL. */
VIB_API vib_status vib_train(vib_network* net, const vib_config* cfg, const vib_dataset* train,
                             const vib_dataset* test, vib_epoch_callback callback, void* user,
                             vib_train_log** log);
/* Retrains surviving weights for train.fine_tune_epochs with gates frozen. */
VIB_API vib_status vib_fine_tune(vib_network* net, const vib_config* cfg, const vib_dataset* train,
                                 const vib_dataset* test, vib_train_log** log);
VIB_API const char* vib_train_log_csv(vib_train_log* log);
VIB_API vib_status vib_train_log_write(const vib_train_log* log, const char* path);
VIB_API size_t vib_train_log_epochs(const vib_train_log* log);
VIB_API void vib_train_log_free(vib_train_log* log);

/* ---- pruning ------------------------------------------------------------ */

typedef struct vib_prune_report vib_prune_report;

VIB_API vib_status vib_prune(const vib_network* net, double tau, int fold, vib_network** pruned,
                             vib_prune_report** report);
VIB_API void vib_prune_report_set_errors(vib_prune_report* report, double before, double after);
VIB_API const char* vib_prune_report_text(vib_prune_report* report);
VIB_API const char* vib_prune_report_csv(vib_prune_report* report);
VIB_API double vib_prune_report_r_w(const vib_prune_report* report);
VIB_API double vib_prune_report_r_n(const vib_prune_report* report);
VIB_API double vib_prune_report_flops(const vib_prune_report* report);
VIB_API void vib_prune_report_free(vib_prune_report* report);

/* ---- analysis ----------------------------------------------------------- */

/* Effective penalty vs. the brute-force variance infimum over the config's
 * grid; writes CSV to `path` and the largest |difference| to `worst`. */
VIB_API vib_status vib_analyze_penalty_grid(const vib_config* cfg, const char* path, double* worst);
/* Random low-rank surrogate problems, each minimised from several starts;
 * writes one CSV row per restart and the largest support to `max_nnz`. */
VIB_API vib_status vib_analyze_surrogate(const vib_config* cfg, const char* path, size_t* max_nnz);
/* KSG estimates for correlated Gaussians against the closed form. */
VIB_API vib_status vib_analyze_mi_demo(const vib_config* cfg, const char* path, double* worst_error);
/* KSG estimate of I(x; y) in nats, clipped at 0. */
VIB_API vib_status vib_mutual_information(const double* x, size_t dx, const double* y, size_t dy, size_t n,
                                          size_t k, double* out);

#ifdef __cplusplus
}
#endif

#endif /* VIBNET_VIBNET_H */
