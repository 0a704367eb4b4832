#include <stdio.h>
#include <stdlib.h>
#include <string.h>

#include "greedyprune.h"

int main(void) {
    enum { N = 40, K = 2 };
    double x[N * K], y[N], pred[N];
    for (int i = 0; i < N; i++) {
        x[2 * i] = i;
        x[2 * i + 1] = (i * 7) % 5;
        y[i] = 2.0 * i - x[2 * i + 1];
    }
    GpModel *model = NULL;
    if (gp_fit(x, N, K, y, "ols", NULL, 1, &model) != GP_OK) {
        return 1;
    }
    if (gp_model_n_features(model) != K || gp_predict(model, x, N, K, pred) != GP_OK) {
        return 2;
    }
    for (int i = 0; i < N; i++) {
        if (pred[i] - y[i] > 1e-8 || y[i] - pred[i] > 1e-8) {
            return 3;
        }
    }
    size_t needed = 0;
    if (gp_model_to_json(model, NULL, 0, &needed) != GP_ERR_BUFFER || needed < 2) {
        return 4;
    }
    char *json = malloc(needed);
    if (gp_model_to_json(model, json, needed, &needed) != GP_OK) {
        return 5;
    }
    GpModel *copy = NULL;
    if (gp_model_from_json(json, &copy) != GP_OK) {
        return 6;
    }
    free(json);
    if (gp_fit(x, N, K, y, "no_such_recipe", NULL, 1, &model) != GP_ERR_CONFIG) {
        return 7;
    }
    char msg[256];
    if (gp_last_error(msg, sizeof msg, NULL) != GP_OK || strlen(msg) == 0) {
        return 8;
    }
    gp_model_free(copy);
    gp_model_free(model);
    printf("ok %s\n", gp_version());
    return 0;
}
