/* Minimal C client: plan a budget and print the achieved FLOPs.
 *
 *   cc plan_demo.c -I../include ../../../target/debug/libchanplan_ffi.a -lpthread -ldl -lm
 *   ./a.out model.json stats.json 1040000000
 */
#include <stdio.h>
#include <stdlib.h>

#include "chanplan.h"

static char *slurp(const char *path) {
    FILE *f = fopen(path, "rb");
    if (!f) {
        perror(path);
        exit(3);
    }
    fseek(f, 0, SEEK_END);
    long n = ftell(f);
    rewind(f);
    char *buf = malloc(n + 1);
    if (fread(buf, 1, n, f) != (size_t)n) {
        perror(path);
        exit(4);
    }
    buf[n] = '\0';
    fclose(f);
    return buf;
}

static int fail(CpStatus s) {
    fprintf(stderr, "error[%s]: %s\n", cp_status_name(s), cp_last_error_message());
    return 1;
}

int main(int argc, char **argv) {
    if (argc != 4) {
        fprintf(stderr, "usage: %s MODEL STATS TARGET_FLOPS\n", argv[0]);
        return 2;
    }
    char *model_json = slurp(argv[1]);
    char *stats_json = slurp(argv[2]);
    uint64_t target = strtoull(argv[3], NULL, 10);

    CpModel *model = NULL;
    CpStatus s = cp_model_parse(model_json, &model);
    if (s != CP_STATUS_OK)
        return fail(s);

    uint64_t full = 0;
    cp_model_flops(model, &full);

    CpPlan *plan = NULL;
    s = cp_plan_create(model, stats_json, target, 0.8, "importance_guided", 1, 0, &plan);
    if (s != CP_STATUS_OK)
        return fail(s);

    uint64_t achieved = 0;
    cp_plan_achieved_flops(plan, &achieved);
    printf("full %llu achieved %llu target %llu\n",
           (unsigned long long)full, (unsigned long long)achieved, (unsigned long long)target);

    cp_plan_free(plan);
    cp_model_free(model);
    free(model_json);
    free(stats_json);
    return 0;
}
