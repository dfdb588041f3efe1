#include <afem/commands.hpp>

#include <CLI11.hpp>

#include <fstream>
#include <iostream>

namespace {

enum ExitCode { kOk = 0, kDataError = 2, kNumericalError = 3 };

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Adaptive FEM reconstruction of conductivity inclusions from boundary data"};
    app.set_version_flag("--version", std::string("ischemia_afem ") + AFEM_VERSION);
    app.require_subcommand(1);

    afem::CommandOptions opts;
    opts.log = &std::cout;
    std::string config;
    std::string output_dir, data_file;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("config", config, "INI configuration file")->required();
        cmd->add_option("--threads", opts.threads, "Worker threads for per-source solves (1 = reproducible)")
            ->check(CLI::PositiveNumber);
        cmd->add_option("--data", data_file, "Override data.file");
    };

    auto* gen = app.add_subcommand("generate", "Synthesize boundary data on the fine mesh");
    add_common(gen);

    auto* rec = app.add_subcommand("reconstruct", "Run the adaptive loop or the uniform baseline");
    add_common(rec);
    rec->add_option("--output", output_dir, "Override output.dir");
    rec->add_flag("--allow-inverse-crime", opts.allow_inverse_crime,
                  "Permit reconstructing on the mesh that generated the data");

    auto* rep = app.add_subcommand("report", "Merge run histories into one long-format CSV");
    std::vector<std::string> runs;
    std::string report_out;
    rep->add_option("runs", runs, "Run directories containing history.csv");
    rep->add_option("-o,--output", report_out, "Output CSV (default: stdout)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kDataError;
    }
    if (!output_dir.empty()) opts.output_dir = output_dir;
    if (!data_file.empty()) opts.data_file = data_file;

    try {
        if (gen->parsed()) {
            afem::cmd_generate(config, opts);
        } else if (rec->parsed()) {
            afem::cmd_reconstruct(config, opts);
        } else if (rep->parsed()) {
            std::vector<std::filesystem::path> dirs(runs.begin(), runs.end());
            if (report_out.empty()) {
                afem::cmd_report(dirs, std::cout);
            } else {
                std::ofstream out(report_out, std::ios::binary);
                if (!out) throw afem::DataError("cannot write " + report_out);
                afem::cmd_report(dirs, out);
            }
        }
    } catch (const afem::NumericalError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kNumericalError;
    } catch (const afem::DataError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kDataError;
    } catch (const afem::InvalidArgument& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kDataError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kDataError;
    }
    return kOk;
}
