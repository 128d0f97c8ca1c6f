/* Minimal consumer: validate a coupling matrix, run a one-component flow
 * to its steady state, read the certified field back out.
 *
 * Build (from the workspace root, after `cargo build -p entroflow-ffi`):
 *   cc -std=c11 -I crates/entroflow-ffi/include \
 *      crates/entroflow-ffi/examples/demo.c \
 *      target/debug/libentroflow_ffi.a -lm -o demo
 */
#include "entroflow.h"
#include <stdio.h>

int main(void) {
    printf("version %s\n", ef_version());

    double lambda = 0.0, beta = 0.0;
    const double cart[4] = {2.0, -1.0, -1.0, 2.0};
    if (ef_matrix_validate(cart, 2, &lambda, &beta) != EF_STATUS_OK) {
        fprintf(stderr, "matrix: %s\n", ef_last_error_message());
        return 1;
    }
    printf("lambda %.12f beta %.12f\n", lambda, beta);

    const char *cfg =
        "{\"N\": 32, \"matrix\": \"identity\","
        " \"h\": [\"1 + 0.5 cos(2 pi x)\"],"
        " \"u0\": [\"0.2 cos(2 pi x)\"],"
        " \"step\": {\"t_end\": 5.0}}";
    EfRun *run = ef_run_create(cfg);
    if (!run) {
        fprintf(stderr, "create: %s\n", ef_last_error_message());
        return 1;
    }
    if (ef_run_execute(run) != EF_STATUS_OK) {
        fprintf(stderr, "execute: %s\n", ef_last_error_message());
        return 1;
    }
    double k0, kf;
    ef_run_entropy_initial(run, &k0);
    ef_run_entropy_final(run, &kf);
    printf("termination %d certified %d entropy %.6e -> %.6e\n",
           ef_run_termination(run), ef_run_certified(run), k0, kf);

    size_t len = ef_run_field_len(run);
    double buf[64];
    if (len > 64 || ef_run_copy_field(run, 0, buf, len) != EF_STATUS_OK) {
        fprintf(stderr, "copy: %s\n", ef_last_error_message());
        return 1;
    }
    printf("field[0] %.3e len %zu\n", buf[0], len);

    ef_run_free(run);
    return (kf < k0 && ef_run_certified(NULL) == -1) ? 0 : 1;
}
