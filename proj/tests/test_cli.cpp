#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "cli.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Outcome {
  int code;
  std::string out, err;
};

Outcome call(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = slowfast::cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

json trailing_json(const std::string& text) {
  const auto at = text.find("\n{");
  return json::parse(at == std::string::npos ? text : text.substr(at + 1));
}

// Returns the row of a CSV whose first column equals `y`.
std::vector<double> csv_row(const std::string& csv, double y) {
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    std::vector<double> row;
    std::istringstream cells(line);
    std::string cell;
    while (std::getline(cells, cell, ',')) row.push_back(std::stod(cell));
    if (!row.empty() && std::abs(row[0] - y) < 1e-12) return row;
  }
  return {};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  return {std::istreambuf_iterator<char>(in), {}};
}

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("slowfast_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("certify prints the hypothesis table") {
  auto r = call({"certify", "--system", "L1", "--eps", "0.1"});
  CHECK(r.code == 0);
  CHECK(r.out.find("H3") != std::string::npos);
  auto doc = trailing_json(r.out);
  CHECK(doc["certificate"]["fields"]["K"]["value"] == 1.0);
}

TEST_CASE("an infeasible override exits with code 2") {
  auto r = call({"certify", "--system", "L1", "--override", "N1=10"});
  CHECK(r.code == 2);
}

TEST_CASE("NF1 spectral gap is reported") {
  auto r = call({"certify", "--system", "NF1", "--m", "64"});
  REQUIRE(r.code == 0);
  auto gap = trailing_json(r.out)["spectral_gap"];
  CHECK(gap["gap"].get<double>() >= 0.5);
  CHECK(gap["margin"].get<double>() > 0.0);
}

TEST_CASE("slow-manifold CSV on L1") {
  auto r = call({"slow-manifold", "--system", "L1", "--eps", "0.1", "--derivative", "1"});
  REQUIRE(r.code == 0);
  auto row = csv_row(r.out, 0.5);
  REQUIRE(row.size() == 3);
  CHECK(row[1] == doctest::Approx(0.4).epsilon(1e-6));
  CHECK(row[2] == doctest::Approx(1.0).epsilon(1e-6));

  auto newton = call({"slow-manifold", "--system", "L1", "--eps", "0"});
  REQUIRE(newton.code == 0);
  auto nrow = csv_row(newton.out, 0.5);
  REQUIRE(nrow.size() == 2);
  CHECK(nrow[1] == doctest::Approx(0.5).epsilon(1e-9));
}

TEST_CASE("reduce on L2") {
  auto r = call({"reduce", "--system", "L2", "--point", "1,0"});
  REQUIRE(r.code == 0);
  auto doc = json::parse(r.out);
  CHECK(doc["P"][0].get<double>() == doctest::Approx(0.1).epsilon(1e-6));

  auto zero = call({"reduce", "--system", "L2", "--point", "0,0.3"});
  REQUIRE(zero.code == 0);
  CHECK(json::parse(zero.out)["Q"][0].get<double>() == 0.0);
}

TEST_CASE("usage errors exit with code 1") {
  CHECK(call({}).code == 1);
  CHECK(call({"certify", "--no-such-flag"}).code == 1);
  CHECK(call({"certify", "--system", "XYZ"}).code == 1);
  CHECK(call({"certify", "--override", "garbage"}).code == 1);
}

TEST_CASE("outputs land in --out without temporary leftovers") {
  const auto dir = scratch("out");
  auto r = call({"slow-manifold", "--system", "L1", "--derivative", "1", "--out", dir.string()});
  REQUIRE(r.code == 0);
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(dir)) names.push_back(e.path().filename().string());
  std::sort(names.begin(), names.end());
  CHECK(names == std::vector<std::string>{"h.csv", "report.json"});
  CHECK(csv_row(slurp(dir / "h.csv"), 0.5).size() == 3);
  CHECK_NOTHROW(json::parse(slurp(dir / "report.json")));
  fs::remove_all(dir);
}
