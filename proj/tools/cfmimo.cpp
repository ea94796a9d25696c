// SPDX-License-Identifier: Apache-2.0
//
// cfmimo: downlink cell-free massive MIMO under probabilistic LoS/NLoS channels
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
// http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// ------------------------------------------------------------------------
//
// Command-line front end. Exit codes: 0 success, 1 configuration error,
// 2 validation failure.

#include "cfmimo/cfmimo.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>

namespace {

using namespace cfmimo;

struct RunOptions {
    std::string spec_file;
    std::optional<std::uint64_t> seed;
    std::size_t workers = 1;
    std::string out_dir = "results";
    std::string preset;
    std::string formats = "csv,svg";
    bool artifacts = false;
};

void add_run_options(CLI::App* app, RunOptions& o, bool spec_required)
{
    auto* spec = app->add_option("spec", o.spec_file, "Spec file (key = value lines)");
    if (spec_required)
        spec->required();
    app->add_option("--seed", o.seed, "Override the spec's seed");
    app->add_option("--workers", o.workers, "Worker threads (0 = all cores); results do not depend on it");
    app->add_option("--out", o.out_dir, "Output directory");
    app->add_option("--preset", o.preset, "Scale preset")->check(CLI::IsMember({"paper", "desk"}));
    app->add_option("--format", o.formats, "Comma-separated output formats: csv, svg");
    app->add_flag("--artifacts", o.artifacts,
                  "Also write allocation CSVs and a binary channel realization for the first drop");
}

int run(const RunOptions& o, std::optional<ExperimentKind> kind)
{
    ExperimentSpec spec = o.spec_file.empty() ? ExperimentSpec::from_text("", kind, o.preset)
                                              : ExperimentSpec::from_file(o.spec_file, kind, o.preset);
    if (o.seed)
        spec.seed = *o.seed;
    const auto formats = split_list(o.formats);
    for (const auto& f : formats)
        if (f != "csv" && f != "svg")
            throw config_error("unknown output format '" + f + "'");

    const auto res = run_experiment(spec, o.workers);
    for (const auto& p : emit(res, o.out_dir, formats))
        std::cout << "wrote " << p.string() << '\n';
    if (o.artifacts)
        for (const auto& p : emit_drop_artifacts(spec, o.out_dir))
            std::cout << "wrote " << p.string() << '\n';

    for (const auto& r : res.rows)
        if (r.statistic == "jensen_violations" && r.value > 0.0)
            std::cerr << "warning: " << r.value << " Jensen-dominance violations for " << r.scheme << " ("
                      << r.power_mode << ") at sweep " << r.sweep << '\n';
    return 0;
}

int validate(std::size_t instances, std::size_t trials, std::uint64_t seed, std::size_t workers, bool verbose)
{
    const auto rep = run_validation(instances, trials, seed, workers);
    std::printf("%-8s %-20s %-10s %-5s %-5s %14s %14s %11s %7s %s\n", "instance", "scheme", "field", "k", "i",
                "closed", "oracle", "stderr", "z", "result");
    for (const auto& c : rep.checks) {
        if (!verbose && c.pass)
            continue;
        std::printf("%-8zu %-20s %-10s %-5zu %-5zu %14.6e %14.6e %11.3e %7.2f %s\n", c.instance,
                    std::string(to_string(c.scheme)).c_str(), c.field.field.c_str(), c.field.k, c.field.i,
                    c.field.closed, c.field.oracle, c.field.stderr_, c.field.z(), c.pass ? "PASS" : "FAIL");
    }
    std::printf("fields checked: %zu, failures: %zu, beyond 3 sigma: %zu (about %.1f expected by chance)\n",
                rep.checks.size(), rep.failures(), rep.strict_exceedances(), 0.0027 * rep.random_fields());
    return rep.failures() == 0 ? 0 : 2;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Cell-free massive MIMO downlink simulator"};
    app.require_subcommand(1);

    RunOptions sim, pmf, snr, cdf, density;
    add_run_options(app.add_subcommand("simulate", "Run the experiment described by a spec file"), sim, true);
    add_run_options(app.add_subcommand("pmf", "LoS-link PMF per UE (kind = los_pmf)"), pmf, false);
    add_run_options(app.add_subcommand("sweep-snr", "Mean rate against data SNR (kind = rate_vs_snr)"), snr, false);
    add_run_options(app.add_subcommand("cdf", "Per-user rate CDF (kind = rate_cdf)"), cdf, false);
    add_run_options(app.add_subcommand("sweep-density", "Mean rate against AP count (kind = rate_vs_density)"),
                    density, false);

    auto* val = app.add_subcommand("validate", "Check closed-form moments against the brute-force oracle");
    std::size_t instances = 20, trials = 1000000, vworkers = 1;
    std::uint64_t vseed = 1;
    bool verbose = false;
    val->add_option("--instances", instances, "Random small instances");
    val->add_option("--trials", trials, "Oracle draws per instance and scheme");
    val->add_option("--seed", vseed, "Seed");
    val->add_option("--workers", vworkers, "Worker threads (0 = all cores)");
    val->add_flag("--verbose", verbose, "Print every field, not only failures");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (app.got_subcommand("simulate")) return run(sim, std::nullopt);
        if (app.got_subcommand("pmf")) return run(pmf, ExperimentKind::LosPmf);
        if (app.got_subcommand("sweep-snr")) return run(snr, ExperimentKind::RateVsSnr);
        if (app.got_subcommand("cdf")) return run(cdf, ExperimentKind::RateCdf);
        if (app.got_subcommand("sweep-density")) return run(density, ExperimentKind::RateVsDensity);
        if (app.got_subcommand("validate")) return validate(instances, trials, vseed, vworkers, verbose);
    } catch (const config_error& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 1;
}
