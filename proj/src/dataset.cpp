#include "subag/dataset.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "subag/error.hpp"

namespace subag {

static_assert(std::endian::native == std::endian::little, "dataset files assume a little-endian host");

namespace {

constexpr std::uint64_t kStreamX = 1;
constexpr std::uint64_t kStreamTheta = 2;
constexpr std::uint64_t kStreamNoise = 3;

void write_block(std::ofstream& out, const double* data, std::size_t count) {
    out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(count * sizeof(double)));
}

void read_block(std::ifstream& in, double* data, std::size_t count) {
    in.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(count * sizeof(double)));
    if (!in) throw Error("dataset binary file is truncated");
}

}  // namespace

Dataset gen_data(Eigen::Index n, Eigen::Index p, const SignalDist& signal, const NoiseDist& noise,
                 std::uint64_t seed) {
    if (n < 1 || p < 1) throw DomainError("gen_data needs n >= 1 and p >= 1");
    Dataset ds;
    ds.n = n;
    ds.p = p;
    ds.seed = seed;

    Engine ex = make_engine(seed, {kStreamX});
    const double sd = 1.0 / std::sqrt(static_cast<double>(p));
    ds.X.resize(n, p);
    // Filled row by row in stream order.
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < p; ++j) ds.X(i, j) = sd * standard_normal(ex);

    Engine et = make_engine(seed, {kStreamTheta});
    ds.theta_star.resize(p);
    for (Eigen::Index j = 0; j < p; ++j) ds.theta_star(j) = signal.sample(et);

    Engine ee = make_engine(seed, {kStreamNoise});
    ds.noise.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) ds.noise(i) = noise.sample(ee);

    ds.y = ds.X * ds.theta_star + ds.noise;
    return ds;
}

void save_dataset(const Dataset& ds, const SignalDist& signal, const NoiseDist& noise,
                  const std::filesystem::path& stem) {
    auto bin = stem;
    bin += ".bin";
    std::ofstream out(bin, std::ios::binary);
    if (!out) throw Error("cannot open " + bin.string() + " for writing");
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rows = ds.X;
    write_block(out, rows.data(), static_cast<std::size_t>(rows.size()));
    write_block(out, ds.y.data(), static_cast<std::size_t>(ds.y.size()));
    write_block(out, ds.theta_star.data(), static_cast<std::size_t>(ds.theta_star.size()));
    if (!out) throw Error("failed writing " + bin.string());

    nlohmann::json meta = {
        {"n", ds.n},
        {"p", ds.p},
        {"seed", ds.seed},
        {"signal", signal.describe()},
        {"noise", noise.describe()},
        {"layout", "float64 little-endian; X row-major (n*p), y (n), theta_star (p)"},
        {"binary", bin.filename().string()},
    };
    auto js = stem;
    js += ".json";
    std::ofstream jout(js);
    if (!jout) throw Error("cannot open " + js.string() + " for writing");
    jout << meta.dump(2) << '\n';
}

Dataset load_dataset(const std::filesystem::path& stem) {
    auto js = stem;
    js += ".json";
    std::ifstream jin(js);
    if (!jin) throw Error("cannot open " + js.string());
    const auto meta = nlohmann::json::parse(jin);

    Dataset ds;
    ds.n = meta.at("n").get<Eigen::Index>();
    ds.p = meta.at("p").get<Eigen::Index>();
    ds.seed = meta.at("seed").get<std::uint64_t>();

    auto bin = stem;
    bin += ".bin";
    std::ifstream in(bin, std::ios::binary);
    if (!in) throw Error("cannot open " + bin.string());
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rows(ds.n, ds.p);
    read_block(in, rows.data(), static_cast<std::size_t>(rows.size()));
    ds.X = rows;
    ds.y.resize(ds.n);
    read_block(in, ds.y.data(), static_cast<std::size_t>(ds.n));
    ds.theta_star.resize(ds.p);
    read_block(in, ds.theta_star.data(), static_cast<std::size_t>(ds.p));
    ds.noise = ds.y - ds.X * ds.theta_star;
    return ds;
}

}  // namespace subag
