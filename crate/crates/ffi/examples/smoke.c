/* Build: cargo build -p phreservoir-ffi
 *        cc smoke.c -I../include -L../../../target/debug -lphreservoir_ffi -lm -lpthread -ldl
 * Run:   LD_LIBRARY_PATH=../../../target/debug ./a.out */
#include <stdio.h>
#include "phreservoir.h"

int main(void) {
    PhrModel *model = NULL;
    PhrMoran *chain = NULL;
    if (phr_model_preset("two-regime-poisson", &model) != PHR_STATUS_OK) {
        fprintf(stderr, "%s\n", phr_last_error());
        return 1;
    }
    if (phr_moran_from_model(model, 5.0, 20.0, 0, 1.0, &chain) != PHR_STATUS_OK) {
        fprintf(stderr, "%s\n", phr_last_error());
        phr_model_free(model);
        return 1;
    }
    size_t states = 0;
    phr_moran_states(chain, &states);
    for (size_t v = 1; v < states; v++) {
        double r = 0.0, a = 0.0, mttf = 0.0;
        phr_moran_reliability(chain, v, 2, &r);
        phr_moran_availability(chain, v, 2, &a);
        phr_moran_mttf(chain, v, &mttf);
        printf("v=%zu R(2)=%.4f A(2)=%.4f MTTF=%.4f\n", v, r, a, mttf);
    }
    phr_moran_free(chain);
    phr_model_free(model);
    return 0;
}
