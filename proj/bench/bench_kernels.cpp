// Serial reference vs OpenMP: the grid posterior kernel and the simulation study.
// With one core the two should be about equal; the OpenMP path pays only its
// fork/join cost.

#include <benchmark/benchmark.h>
#include <omp.h>

#include <vector>

#include "escalate/config.hpp"
#include "escalate/inference.hpp"
#include "escalate/kernels.hpp"
#include "escalate/sim_harness.hpp"

using namespace escalate;

namespace {

struct KernelInput {
    std::shared_ptr<const ComponentModel> model;
    std::vector<kernels::LikelihoodTerm> terms;
    std::vector<double> density, rows;

    explicit KernelInput(std::size_t nodes) {
        model = ComponentModel::build(published_dog_prior().params.inflated(2.0), reference_dose_grid(), {6.0, nodes});
        const std::size_t idx[] = {1, 2, 3, 4};
        const int r[] = {0, 0, 1, 2};
        for (int k = 0; k < 4; ++k)
            terms.push_back({model->log_risk(idx[k]).data(), model->log_one_minus_risk(idx[k]).data(), double(r[k]),
                             double(3 - r[k])});
        density.resize(model->grid().size());
        rows.resize(model->grid().n2);
    }
    kernels::GridView view() const {
        const auto& g = model->grid();
        return {g.n1, g.n2, g.weights.data(), model->log_prior().data()};
    }
};

template <auto Kernel>
void posterior(benchmark::State& st) {
    KernelInput in(std::size_t(st.range(0)));
    for (auto _ : st) benchmark::DoNotOptimize(Kernel(in.view(), in.terms, in.density, in.rows));
    st.SetItemsProcessed(st.iterations() * std::int64_t(in.density.size()));
    st.counters["threads"] = omp_get_max_threads();
}

void study(benchmark::State& st, bool parallel) {
    const StudyDesign d = reference_study_design();
    const std::vector<Scenario> scen{scenario_table()[2]};
    const auto procs = parse_procedures("A,C");
    for (auto _ : st) benchmark::DoNotOptimize(run_study(d, scen, procs, 20, 99, {parallel, 0}));
    st.counters["threads"] = omp_get_max_threads();
}

}  // namespace

BENCHMARK(posterior<kernels::posterior_serial>)->Name("posterior_serial")->Arg(101)->Arg(201)->Arg(401);
BENCHMARK(posterior<kernels::posterior_omp>)->Name("posterior_omp")->Arg(101)->Arg(201)->Arg(401);
BENCHMARK_CAPTURE(study, serial, false)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(study, omp, true)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
