#include <math.h>
#include <stdio.h>
#include "kernsurv.h"

int main(void) {
    double x[] = {0.0, 1.0, 2.0, 3.0};
    double t[] = {1.0, 2.0, 3.0, 4.0};
    uint8_t e[] = {1, 0, 1, 1};
    KsDataset *data = NULL;
    if (ks_dataset_from_arrays(x, 4, 1, t, e, &data) != KS_STATUS_OK) return 1;
    if (ks_dataset_len(data) != 4) return 2;

    KsModel *model = NULL;
    if (ks_model_fit(data, "basic", 0, 0, 2, 4, 0.01, 0, 1, &model) != KS_STATUS_OK) {
        fprintf(stderr, "%s\n", ks_last_error_message());
        return 3;
    }
    double q[] = {1.5};
    KsCurve *curve = NULL;
    if (ks_model_predict_curve(model, q, 1, &curve) != KS_STATUS_OK) return 4;
    size_t m = ks_curve_len(curve);
    if (m != 4) return 5;
    double s = ks_curve_at(curve, 0.5);
    if (s != 1.0) return 6;

    double bad[] = {1.0, 2.0};
    KsCurve *none = NULL;
    if (ks_model_predict_curve(model, bad, 2, &none) != KS_STATUS_DIMENSION_MISMATCH) return 7;

    double scores[] = {1.0, 2.0, 3.0, 4.0};
    double qhat = 0.0;
    if (ks_marginal_quantile(scores, 4, 0.2, &qhat) != KS_STATUS_OK || qhat != 4.0) return 8;
    if (ks_marginal_quantile(scores, 4, 0.01, &qhat) != KS_STATUS_OK || !isinf(qhat)) return 9;

    ks_curve_free(curve);
    ks_model_free(model);
    ks_dataset_free(data);
    printf("ok %s\n", ks_version());
    return 0;
}
