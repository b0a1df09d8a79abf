#include <stdio.h>
#include <stdlib.h>
#include <string.h>

#include "dred.h"

static char *read_file(const char *path) {
    FILE *f = fopen(path, "rb");
    if (!f) return NULL;
    fseek(f, 0, SEEK_END);
    long n = ftell(f);
    rewind(f);
    char *buf = malloc((size_t)n + 1);
    if (fread(buf, 1, (size_t)n, f) != (size_t)n) {
        fclose(f);
        free(buf);
        return NULL;
    }
    buf[n] = 0;
    fclose(f);
    return buf;
}

#define CHECK(call)                                                   \
    do {                                                              \
        enum DredStatus s_ = (call);                                  \
        if (s_ != DRED_STATUS_OK) {                                   \
            char msg_[256];                                           \
            dred_last_error_message(msg_, sizeof msg_);               \
            fprintf(stderr, "%s failed (%d): %s\n", #call, s_, msg_); \
            return 1;                                                 \
        }                                                             \
    } while (0)

int main(int argc, char **argv) {
    if (argc != 2) return 2;
    char *json = read_file(argv[1]);
    if (!json) return 2;

    DredScenario *sc = NULL;
    CHECK(dred_scenario_new(json, &sc));
    free(json);

    DredTrajectory *traj = NULL;
    CHECK(dred_run(sc, &traj));
    size_t len = dred_trajectory_len(traj);
    double *err = malloc(len * sizeof *err);
    CHECK(dred_trajectory_errors(traj, 0, err, len));
    printf("samples %zu final_err0 %.6e\n", len, err[len - 1]);
    free(err);

    char *metrics = NULL;
    CHECK(dred_trajectory_metrics_json(traj, &metrics));
    printf("metrics_bytes %zu\n", strlen(metrics));
    dred_string_free(metrics);

    if (dred_trajectory_errors(traj, 7, NULL, 0) != DRED_STATUS_OUT_OF_RANGE) return 3;

    dred_trajectory_free(traj);
    dred_scenario_free(sc);
    printf("version %s\n", dred_version());
    return 0;
}
