/* Trains a small run through the C API and prints its curve. */
#include <stdio.h>

#include "bimodal_cl.h"

static int check(BclStatus s, const char *what) {
  if (s != BCL_STATUS_OK) {
    const char *msg = bcl_last_error();
    fprintf(stderr, "%s failed (%d): %s\n", what, (int)s, msg ? msg : "");
    return 1;
  }
  return 0;
}

int main(void) {
  BclDataset *ds = NULL;
  BclRun *run = NULL;
  BclModel *model = NULL;
  const char *config =
      "[split]\nnum_tasks = 2\n[run]\nmethod = \"gcl\"\nepochs_per_task = 2\n"
      "memory_capacity = 8\n";
  if (check(bcl_dataset_generate(4, 10, 3, 3.0, 0.4, 1, &ds), "generate")) return 1;
  if (check(bcl_run(ds, config, &run), "run")) return 1;
  size_t t = bcl_run_num_tasks(run);
  double curve[2];
  if (t != 2 || check(bcl_run_curve(run, curve, t), "curve")) return 1;
  if (check(bcl_run_model(run, &model), "model")) return 1;
  double x[3] = {0.5, -0.5, 1.0};
  uint32_t candidates[4] = {0, 1, 2, 3};
  uint32_t cls = 99;
  if (check(bcl_model_predict(model, x, 3, candidates, 4, &cls), "predict")) return 1;
  if (bcl_dataset_generate(0, 10, 3, 3.0, 0.4, 1, &ds) != BCL_STATUS_INVALID_CONFIG) return 1;
  printf("curve %.4f %.4f class %u\n", curve[0], curve[1], cls);
  bcl_model_free(model);
  bcl_run_free(run);
  bcl_dataset_free(ds);
  return cls < 4 ? 0 : 1;
}
