#include <stdio.h>
#include "mppt_lab.h"

#define CHECK(call)                                                        \
    do {                                                                   \
        MpptStatus s_ = (call);                                            \
        if (s_ != MPPT_STATUS_OK) {                                        \
            fprintf(stderr, "%s -> %d: %s\n", #call, (int)s_,              \
                    mppt_last_error_message());                            \
            return 1;                                                      \
        }                                                                  \
    } while (0)

int main(void) {
    size_t series[3] = {5, 5, 2};
    double irr[3] = {1.0, 0.8, 0.5};
    MpptArray *array = NULL;
    double v = 0.0, p = 0.0;
    CHECK(mppt_array_new(series, 3, 12, &array));
    CHECK(mppt_array_find_gmpp(array, irr, 3, 298.15, &v, &p));
    if (mppt_array_find_gmpp(array, irr, 2, 298.15, &v, &p) != MPPT_STATUS_SHAPE_MISMATCH) {
        return 2;
    }
    MpptGllr *gllr = NULL;
    bool alarm = false;
    CHECK(mppt_gllr_new(0.0, 1.0, 50.0, 5, 100.0, &gllr));
    for (int k = 0; k < 10; k++) {
        CHECK(mppt_gllr_step(gllr, 100.0, &alarm));
    }
    mppt_gllr_free(gllr);
    mppt_array_free(array);
    printf("%.3f %.3f %d\n", v, p, (int)alarm);
    return 0;
}
