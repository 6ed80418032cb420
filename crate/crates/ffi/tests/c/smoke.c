#include <stdio.h>
#include <string.h>
#include "ippgd.h"

int main(void) {
    IppgdProblem *p = NULL;
    IppgdConfig *c = NULL;
    IppgdResult *r = NULL;
    if (ippgd_problem_quadratic(12, 3, 5.0, 7, 0.0, &p) != IPPGD_STATUS_OK) return 10;
    if (ippgd_config_new(p, IPPGD_METHOD_PGD, &c) != IPPGD_STATUS_OK) return 11;
    if (ippgd_config_set_tau(c, 0.0) != IPPGD_STATUS_INVALID_ARGUMENT) return 12;
    if (strstr(ippgd_last_error(), "tau") == NULL) return 13;
    if (ippgd_solve(p, c, &r) != IPPGD_STATUS_OK) return 14;
    if (ippgd_result_status(r) != IPPGD_RUN_STATUS_CONVERGED) return 15;
    double u[12];
    if (ippgd_result_solution(r, u, 12) != IPPGD_STATUS_OK) return 16;
    printf("%zu %.3e\n", ippgd_result_iterations(r), u[0]);
    ippgd_result_free(r);
    ippgd_config_free(c);
    ippgd_problem_free(p);
    return 0;
}
