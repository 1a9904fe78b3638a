/* Build: cargo build -p shadowprice-ffi --release
 *        cc demo.c -I../include -L../../../target/release -l:libshadowprice_ffi.a -lm -lpthread -ldl -o demo */
#include <stdio.h>
#include <stdlib.h>

#include "shadowprice.h"

int main(void) {
    enum { N = 200, P = 3 };
    double y[N], x[N * P];
    unsigned s = 12345;
    for (int i = 0; i < N; i++) {
        double u1, u2;
        s = s * 1103515245u + 12345u; u1 = (s >> 8) / 16777216.0 - 0.5;
        s = s * 1103515245u + 12345u; u2 = (s >> 8) / 16777216.0 - 0.5;
        s = s * 1103515245u + 12345u;
        x[i * P] = 1.0;
        x[i * P + 1] = u1;
        x[i * P + 2] = u2;
        y[i] = 0.5 + 0.8 * u1 + 0.05 * u2 + 0.3 * ((s >> 8) / 16777216.0 - 0.5);
    }
    const char *restrictions[] = {"theta[1] = 0", "theta[2] = 0"};

    SpDataset *data = NULL;
    SpRestrictions *sys = NULL;
    SpFit *fit = NULL;
    if (sp_dataset_new(y, x, N, P, 1, &data) != SP_STATUS_OK ||
        sp_restrictions_new(restrictions, 2, P, NULL, &sys) != SP_STATUS_OK ||
        sp_fit(data, sys, NULL, &fit) != SP_STATUS_OK) {
        fprintf(stderr, "error: %s\n", sp_last_error());
        return 1;
    }
    double c_hat, lambda, bias, var, theta[P], isp[2];
    sp_fit_summary(fit, &c_hat, &lambda, &bias, &var);
    sp_fit_vector(fit, SP_VECTOR_DEBIASED, theta, P);
    sp_fit_vector(fit, SP_VECTOR_ISP, isp, 2);
    printf("c_hat %.6g lambda %.6g risk %.6g\n", c_hat, lambda, bias + var);
    printf("theta_db %.4f %.4f %.4f\n", theta[0], theta[1], theta[2]);
    printf("isp %.3g %.3g\n", isp[0], isp[1]);
    sp_fit_free(fit);
    sp_restrictions_free(sys);
    sp_dataset_free(data);
    return 0;
}
