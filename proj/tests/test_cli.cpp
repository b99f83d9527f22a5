#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "shelab/common.hpp"
#include "shelab/experiment.hpp"

using namespace shelab;
namespace fs = std::filesystem;

namespace {

std::string slurp(const std::string& path) {
    std::ifstream in(path);
    REQUIRE(in.good());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

fs::path fresh_dir(const std::string& name) {
    fs::path dir = fs::temp_directory_path() / name;
    fs::remove_all(dir);
    return dir;
}

}  // namespace

TEST_CASE("config parsing: keys, comments, typed accessors, field paths") {
    auto cfg = cli::Config::from_string(
        "# comment\n"
        "experiment = dalang\n"
        "correlation.kind = white_noise\n"
        "dalang.beta = 0.5, 1, 4\n"
        "mc.n_paths = 100\n"
        "flag = true\n");
    CHECK(cfg.get_string("experiment") == "dalang");
    CHECK(cfg.get_int("mc.n_paths") == 100);
    CHECK(cfg.get_bool_or("flag", false));
    CHECK(cfg.get_double_list("dalang.beta").size() == 3);
    CHECK(cfg.get_double_or("absent", 7.5) == 7.5);

    CHECK_THROWS_WITH_AS(cfg.get_string("rho.kind"),
                         "config field 'rho.kind': missing required field",
                         std::invalid_argument);
    CHECK_THROWS_AS(cli::Config::from_string("not a key value line\n"),
                    std::invalid_argument);
    CHECK_THROWS_AS(cfg.get_int("experiment"), std::invalid_argument);

    // serialize -> parse round trip preserves entries
    auto back = cli::Config::from_string(cfg.serialize());
    CHECK(back.entries() == cfg.entries());
}

TEST_CASE("system and functional construction from config") {
    auto cfg = cli::Config::from_string(
        "system.source = direct\n"
        "system.n_sites = 3\n"
        "system.kappa = 1.0\n"
        "system.p = ring\n"
        "system.u0 = 1.0\n"
        "gamma.kind = exp\n"
        "gamma.g0 = 1.0\n"
        "gamma.rate = 0.25\n"
        "rho.kind = linear\n"
        "rho.lambda = 1.0\n"
        "functional.1 = moment t=0.5 site=1 k=2\n"
        "functional.2 = laplace t=0.5,0.5 site=0,2 lambda=1,0.5\n"
        "functional.3 = central_even t=0.5 site=1 c=mean n=2\n"
        "functional.4 = coordinate_map t=0.5 site=1 g=exp_neg lambda=1\n"
        "functional.5 = norm_power t=0.5 sites=0|1|2 alpha=2\n"
        "functional.6 = coordinate_map t=0.5 site=2 g=pow_log b=1 a=1 c=3 k=1\n"
        "functional.7 = coordinate_map t=0.5 site=0 g=log_ratio a=2 b=1\n");
    auto sys = cli::system_from_config(cfg);
    CHECK(sys.size() == 3);
    CHECK(sys.gamma_at({1}) == doctest::Approx(0.25));
    auto fs_list = cli::functionals_from_config(cfg, sys);
    REQUIRE(fs_list.size() == 7);
    CHECK(fs_list[5].evaluate({2.0}) == doctest::Approx(2.0 * std::log(5.0)));
    CHECK(fs_list[6].evaluate({1.0}) == doctest::Approx(std::log(1.5)));
    CHECK(fs_list[0].kind() == cmp::Functional::Kind::Moment);
    CHECK(fs_list[2].kind() == cmp::Functional::Kind::CentralEven);
    // c=mean resolves to the deterministic flow value (flat state: 1.0)
    CHECK(fs_list[2].evaluate({1.0}) == doctest::Approx(0.0));

    auto bad = cli::Config::from_string("system.source = direct\nsystem.n_sites = 2\n"
                                        "system.kappa = 1\nrho.kind = nope\n");
    CHECK_THROWS_AS(cli::rho_from_config(bad, "rho."), std::invalid_argument);
}

TEST_CASE("dalang experiment writes the closed-form upsilon") {
    auto cfg = cli::Config::from_string(
        "experiment = dalang\n"
        "correlation.kind = white_noise\n"
        "correlation.dim = 1\n"
        "dalang.beta = 0.5, 1, 4\n");
    auto dir = fresh_dir("shelab_cli_dalang");
    auto res = cli::run(cfg, dir.string());
    CHECK(res.exit_code == cli::kExitOk);
    std::string csv = slurp((dir / "dalang.csv").string());
    // upsilon(beta) = 1/(2 sqrt(beta))
    CHECK(csv.find("finite") != std::string::npos);
    std::istringstream lines(csv);
    std::string line;
    std::getline(lines, line);  // header comment
    std::getline(lines, line);  // column names
    double betas[3] = {0.5, 1.0, 4.0};
    for (double beta : betas) {
        std::getline(lines, line);
        auto comma = line.rfind(',');
        double ups = std::stod(line.substr(comma + 1));
        CHECK(ups == doctest::Approx(1.0 / (2.0 * std::sqrt(beta))).epsilon(1e-6));
    }
    CHECK(fs::exists(dir / "manifest.cfg"));
    CHECK(fs::exists(dir / "summary.txt"));
    fs::remove_all(dir);
}

TEST_CASE("malformed config: exit 1 and only the error log") {
    auto cfg = cli::Config::from_string(
        "experiment = compare-rho\n"
        "system.source = direct\n"
        "system.n_sites = 2\n"
        "system.kappa = 1.0\n"
        "gamma.kind = diag\n"
        "gamma.g0 = 1.0\n"
        // rho spec missing entirely
        "functional.1 = moment t=0.5 site=0 k=2\n");
    auto dir = fresh_dir("shelab_cli_bad");
    auto res = cli::run(cfg, dir.string());
    CHECK(res.exit_code == cli::kExitError);
    CHECK(fs::exists(dir / "error.log"));
    CHECK_FALSE(fs::exists(dir / "verdicts.csv"));
    CHECK_FALSE(fs::exists(dir / "manifest.cfg"));
    CHECK(slurp((dir / "error.log").string()).find("rho.kind") != std::string::npos);
    fs::remove_all(dir);
}

TEST_CASE("compare-rho end to end with manifest round trip") {
    auto cfg = cli::Config::from_string(
        "experiment = compare-rho\n"
        "seed = 99\n"
        "system.source = direct\n"
        "system.n_sites = 3\n"
        "system.kappa = 1.0\n"
        "system.p = ring\n"
        "system.u0 = 1.0\n"
        "gamma.kind = exp\n"
        "gamma.g0 = 1.0\n"
        "gamma.rate = 0.2\n"
        "rho.kind = linear\n"
        "rho.lambda = 2.0\n"
        "rho2.kind = linear\n"
        "rho2.lambda = 1.0\n"
        "mc.n_paths = 400\n"
        "mc.dt = 0.01\n"
        "functional.1 = moment t=0.5 site=1 k=2\n"
        "functional.2 = laplace t=0.5 site=1 lambda=1\n");
    auto dir1 = fresh_dir("shelab_cli_rho1");
    auto res1 = cli::run(cfg, dir1.string());
    CHECK(res1.exit_code == cli::kExitOk);
    std::string csv1 = slurp((dir1 / "verdicts.csv").string());
    CHECK(csv1.find("Consistent") != std::string::npos);

    // the manifest alone reproduces the run byte for byte
    auto manifest = cli::Config::from_file((dir1 / "manifest.cfg").string());
    auto dir2 = fresh_dir("shelab_cli_rho2");
    auto res2 = cli::run(manifest, dir2.string());
    CHECK(res2.exit_code == res1.exit_code);
    CHECK(slurp((dir2 / "verdicts.csv").string()) == csv1);

    // a different seed changes the estimates
    auto cfg_seed = manifest;
    cfg_seed.set("seed", "100");
    auto dir3 = fresh_dir("shelab_cli_rho3");
    cli::run(cfg_seed, dir3.string());
    CHECK(slurp((dir3 / "verdicts.csv").string()) != csv1);

    fs::remove_all(dir1);
    fs::remove_all(dir2);
    fs::remove_all(dir3);
}

TEST_CASE("simulate experiment dumps trajectories") {
    auto cfg = cli::Config::from_string(
        "experiment = simulate\n"
        "seed = 3\n"
        "system.source = direct\n"
        "system.n_sites = 2\n"
        "system.kappa = 1.0\n"
        "system.p = ring\n"
        "system.u0 = 1.0\n"
        "gamma.kind = diag\n"
        "gamma.g0 = 1.0\n"
        "rho.kind = linear\n"
        "rho.lambda = 1.0\n"
        "mc.n_paths = 4\n"
        "mc.dt = 0.05\n"
        "mc.t = 0.2\n"
        "simulate.n_dump_paths = 2\n");
    auto dir = fresh_dir("shelab_cli_sim");
    auto res = cli::run(cfg, dir.string());
    CHECK(res.exit_code == cli::kExitOk);
    std::string csv = slurp((dir / "trajectories.csv").string());
    CHECK(csv.find("path_id,t,site,value") != std::string::npos);
    // 2 paths x 5 times x 2 sites rows + 2 header lines
    int rows = 0;
    for (char c : csv)
        if (c == '\n') ++rows;
    CHECK(rows == 2 + 2 * 5 * 2);
    fs::remove_all(dir);
}

TEST_CASE("compare-gamma and slepian experiments run end to end") {
    auto base =
        "seed = 11\n"
        "system.source = direct\n"
        "system.n_sites = 2\n"
        "system.kappa = 1.0\n"
        "system.p = ring\n"
        "system.u0 = 1.0\n"
        "rho.kind = linear\n"
        "rho.lambda = 1.0\n"
        "mc.n_paths = 400\n"
        "mc.dt = 0.01\n";
    {
        auto cfg = cli::Config::from_string(std::string("experiment = compare-gamma\n") +
                                            base +
                                            "gamma.kind = bump\n"
                                            "gamma.g0 = 1.0\n"
                                            "gamma.bump = 0.4\n"
                                            "gamma2.kind = diag\n"
                                            "gamma2.g0 = 1.0\n"
                                            "functional.1 = moment t=0.5 site=0 k=2\n");
        auto dir = fresh_dir("shelab_cli_gamma");
        auto res = cli::run(cfg, dir.string());
        CHECK((res.exit_code == cli::kExitOk || res.exit_code == cli::kExitInconclusive));
        CHECK(fs::exists(dir / "verdicts.csv"));
        fs::remove_all(dir);
    }
    {
        auto cfg = cli::Config::from_string(std::string("experiment = slepian\n") + base +
                                            "gamma.kind = constant\n"
                                            "gamma.g0 = 1.0\n"
                                            "gamma2.kind = diag\n"
                                            "gamma2.g0 = 1.0\n"
                                            "slepian.t = 0.5\n"
                                            "slepian.sites = 0,1\n"
                                            "slepian.thresholds = 1.0\n");
        auto dir = fresh_dir("shelab_cli_slepian");
        auto res = cli::run(cfg, dir.string());
        CHECK((res.exit_code == cli::kExitOk || res.exit_code == cli::kExitInconclusive));
        CHECK(fs::exists(dir / "slepian.csv"));
        fs::remove_all(dir);
    }
}

TEST_CASE("zero-noise convergence ladder decreases at first order") {
    // deterministic configuration: distances are pure discretization errors
    auto f = corr::CorrelationFunction::gaussian_bump(1.0, 1);
    auto mu = heat::InitialDatum::lebesgue(1);
    auto rc = rho::DiffusionCoefficient::zero();
    std::vector<cli::LadderLevel> levels = {
        {0.4, 0.2, 0.02}, {0.4, 0.1, 0.01}, {0.4, 0.05, 0.005}};
    auto dists = cli::convergence_study(f, mu, rc, levels, 6.0, 0.4, 0.0, 4, 1);
    REQUIRE(dists.size() == 2);
    // flat initial data stays flat: refine the probe with a point mass
    auto mu2 = heat::truncate_initial(heat::InitialDatum::point_masses({{{0.0}, 1.0}}, 1), 0.5);
    auto d2 = cli::convergence_study(f, mu2, rc, levels, 6.0, 0.4, 0.0, 4, 1);
    REQUIRE(d2.size() == 2);
    CHECK(d2[1].l2_distance < d2[0].l2_distance);
}

TEST_CASE("oracle experiment gates the pam ODE") {
    auto cfg = cli::Config::from_string(
        "experiment = oracle\n"
        "seed = 17\n"
        "system.source = direct\n"
        "system.n_sites = 2\n"
        "system.kappa = 1.0\n"
        "system.p = ring\n"
        "system.u0 = 1.0\n"
        "gamma.kind = exp\n"
        "gamma.g0 = 1.0\n"
        "gamma.rate = 0.2\n"
        "rho.kind = linear\n"
        "rho.lambda = 1.0\n"
        "mc.n_paths = 4000\n"
        "mc.dt = 0.005\n"
        "oracle.t = 0.5\n"
        "oracle.kind = pam\n");
    auto dir = fresh_dir("shelab_cli_oracle");
    auto res = cli::run(cfg, dir.string());
    CHECK(res.exit_code == cli::kExitOk);
    CHECK(slurp((dir / "oracle.csv").string()).find("pam_second_moments") !=
          std::string::npos);
    fs::remove_all(dir);
}
