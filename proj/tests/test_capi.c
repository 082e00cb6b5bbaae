/* Exercises the C interface from plain C. */
#include <math.h>
#include <stdio.h>
#include <string.h>

#include "vibnet/vibnet.h"

static int failures = 0;

#define EXPECT(cond)                                              \
  do {                                                            \
    if (!(cond)) {                                                \
      fprintf(stderr, "%s:%d: failed: %s\n", __FILE__, __LINE__, #cond); \
      ++failures;                                                 \
    }                                                             \
  } while (0)

static int epochs_seen = 0;
static int count_epochs(void* user, const vib_network* net, size_t epoch) {
  (void)user;
  (void)net;
  epochs_seen = (int)epoch;
  return 0;
}

int main(void) {
  vib_config* cfg = NULL;
  EXPECT(vib_config_parse("[train]\nlearnin_rate = 1\n", &cfg) == VIB_ERR_CONFIG);
  EXPECT(strcmp(vib_last_error_key(), "train.learnin_rate") == 0);
  EXPECT(cfg == NULL);
  EXPECT(vib_config_load("/nonexistent.ini", &cfg) == VIB_ERR_IO);
  EXPECT(strcmp(vib_status_name(VIB_ERR_DEGENERATE), "degenerate") == 0);

  EXPECT(vib_config_parse("[run]\narchitecture = toy_mlp:4-6-3\nseed = 2\n"
                          "[data]\nsource = blobs\nblobs_n = 120\nblobs_test_n = 60\nblobs_dim = 4\n"
                          "[train]\nepochs = 2\nlearning_rate = 0.01\ngamma_prime = 0.5\n",
                          &cfg) == VIB_OK);
  EXPECT(strcmp(vib_config_architecture(cfg), "toy_mlp:4-6-3") == 0);

  vib_dataset *train = NULL, *test = NULL;
  EXPECT(vib_dataset_load(cfg, NULL, &train, &test) == VIB_OK);
  EXPECT(vib_dataset_size(train) == 120);
  EXPECT(vib_dataset_features(test) == 4);

  vib_network* net = NULL;
  EXPECT(vib_network_build("no_such_net", 1, &net) == VIB_ERR_INPUT);
  EXPECT(strlen(vib_last_error()) > 0);
  EXPECT(vib_network_build(vib_config_architecture(cfg), vib_config_seed(cfg), &net) == VIB_OK);
  EXPECT(vib_network_input_features(net) == 4);
  EXPECT(vib_network_output_width(net) == 3);

  vib_train_log* log = NULL;
  EXPECT(vib_train(net, cfg, train, test, count_epochs, NULL, &log) == VIB_OK);
  EXPECT(epochs_seen == 2);
  EXPECT(vib_train_log_epochs(log) == 2);
  EXPECT(strncmp(vib_train_log_csv(log), "epoch,loss,data_term,kl_block0,", 31) == 0);

  double x[8] = {0.1, 0.2, 0.3, 0.4, -1, 0, 1, 2}, y[6], y2[6];
  EXPECT(vib_network_predict(net, x, 2, 4, y) == VIB_OK);
  EXPECT(vib_network_predict(net, x, 2, 4, y2) == VIB_OK);
  EXPECT(memcmp(y, y2, sizeof y) == 0); /* eval mode draws no noise */
  EXPECT(vib_network_predict(net, x, 2, 3, y) == VIB_ERR_DIMENSION);

  vib_network* pruned = NULL;
  vib_prune_report* report = NULL;
  EXPECT(vib_prune(net, 1e-2, 0, &pruned, &report) == VIB_OK);
  EXPECT(vib_prune_report_r_w(report) <= 100.0);
  EXPECT(strstr(vib_prune_report_text(report), "architecture") != NULL);
  EXPECT(vib_prune(net, 1e12, 0, &pruned, &report) == VIB_ERR_DEGENERATE);

  double err = -1;
  EXPECT(vib_network_error_rate(pruned, test, &err) == VIB_OK);
  EXPECT(err >= 0 && err <= 1);

  double mx[600], my[600], mi = -1;
  for (int i = 0; i < 600; ++i) {
    mx[i] = sin(0.37 * i);
    my[i] = mx[i] * mx[i] + 0.01 * cos(1.3 * i);
  }
  EXPECT(vib_mutual_information(mx, 1, my, 1, 600, 5, &mi) == VIB_OK);
  EXPECT(mi > 0.5);

  vib_prune_report_free(report);
  vib_network_free(pruned);
  vib_train_log_free(log);
  vib_network_free(net);
  vib_dataset_free(train);
  vib_dataset_free(test);
  vib_config_free(cfg);
  if (failures) fprintf(stderr, "%d failures\n", failures);
  return failures ? 1 : 0;
}
