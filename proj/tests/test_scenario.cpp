#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "stochabs/pipeline.hpp"
#include "stochabs/scenario.hpp"

using namespace stochabs;

namespace {

const char* kRoomsSource = R"(
name rooms_test
network {
  topology ring
  copies 3
  subsystem {
    A [[0.4]]
    B [[25.0]]
    C [[1.0]]
    D [[0.1, 0.1]]
    R [[1.0]]
    noise_std [0.21]
    bias [-0.4]
    bilinear { input 0 N [[-0.5]] }
  }
}
initial [20.0]
finite_stage {
  certificate { M [[1.0]] K [[0.0]] kappa_hat 0.48 pi 1.0 pi_tilde 0.99 delta_tilde 2.0 }
  state_grid { lower [19] upper [21] cells [200] }
  input_grid { lower [0] upper [0.6] cells [15] }
  internal_cells [3, 3]
}
objective {
  safe_lower [19] safe_upper [21]
  horizon 20
  epsilons [0.25, 0.5, 1.0]
  internal_mode robust_min
}
simulation { runs 100 seed 11 }
)";

}  // namespace

TEST_CASE("room scenario parses with every section typed") {
  std::stringstream src(kRoomsSource);
  const Scenario scn = parse_scenario(src, "rooms_test.scn");
  CHECK(scn.name == "rooms_test");
  CHECK(scn.copies == 3);
  CHECK(scn.topology == Topology::ring);
  CHECK(scn.unit.state_dim() == 1);
  CHECK(scn.unit.internal_dim() == 2);
  CHECK(scn.unit.bilinear.size() == 1);
  CHECK(scn.unit.bias(0) == doctest::Approx(-0.4));
  REQUIRE(scn.finite.has_value());
  CHECK(scn.finite->state_grid.total() == 200);
  CHECK(scn.finite->state_grid.delta() == doctest::Approx(0.01));
  CHECK(scn.finite->input_grid.center(0)(0) == doctest::Approx(0.02));
  CHECK(scn.finite->cert.kappa_hat == doctest::Approx(0.48));
  CHECK(scn.objective.horizon == 20);
  CHECK(scn.objective.epsilons.size() == 3);
  CHECK(scn.objective.internal_mode == InternalMode::robust_min);
  CHECK(scn.simulation.runs == 100);
  CHECK_FALSE(scn.reduced.has_value());

  const Interconnection net = scn.build_network();
  CHECK(validate_interconnection(net).pass);
}

TEST_CASE("tabulated nonlinearities and multiple terms parse") {
  std::stringstream src(R"(
name multi
network {
  topology single
  copies 1
  subsystem {
    A [[0.5, 0], [0, 0.5]]
    B [[1], [0]]
    C [[1, 0]]
    nonlinearity {
      E [[1], [0]]
      F [[0, 0.3]]
      phi tabulated
      phi_table [[-1, -0.5], [0, 0], [2, 1]]
    }
    nonlinearity { E [[0], [1]] F [[0.2, 0]] phi sat }
  }
}
)");
  const Scenario scn = parse_scenario(src, "multi.scn");
  REQUIRE(scn.unit.nonlin.size() == 2);
  CHECK(scn.unit.nonlin[0].phi(0.0) == 0.0);
  CHECK(scn.unit.nonlin[0].phi(-1.0) == doctest::Approx(-0.5));
  CHECK(scn.unit.nonlin[0].phi(1.0) == doctest::Approx(0.5));  // interpolated
  CHECK(scn.unit.nonlin[0].slope_b == doctest::Approx(0.5));
  CHECK(scn.unit.nonlin[1].phi(3.0) == doctest::Approx(1.0));  // saturation
  // two-term step agrees with the hand expansion
  Vector x(2);
  x << 1.0, 2.0;
  const Vector nu = Vector::Zero(1);
  const Vector next = scn.unit.deterministic_step(x, nu, Vector(0));
  CHECK(next(0) == doctest::Approx(0.5 + scn.unit.nonlin[0].phi(0.6)));
  CHECK(next(1) == doctest::Approx(1.0 + scn.unit.nonlin[1].phi(0.2)));
}

TEST_CASE("slope declarations are spot-checked on load") {
  std::stringstream src(R"(
network {
  topology single
  copies 1
  subsystem {
    A [[0.5]]
    B [[1]]
    C [[1]]
    E [[1]]
    F [[1]]
    phi sin
    slope_a -0.2
    slope_b 0.2
  }
}
)");
  CHECK_THROWS_AS(parse_scenario(src, "badslope.scn"), ScenarioError);
}

TEST_CASE("schema violations carry line anchors") {
  SUBCASE("missing required key") {
    std::stringstream src("network { topology ring copies 2 }\n");
    try {
      parse_scenario(src, "broken.scn");
      FAIL("expected a scenario error");
    } catch (const ScenarioError& e) {
      CHECK(std::string(e.what()).find("broken.scn:1") != std::string::npos);
      CHECK(std::string(e.what()).find("subsystem") != std::string::npos);
    }
  }
  SUBCASE("bad number formats point at the token's line") {
    std::stringstream src(
        "network {\n topology ring\n copies two\n subsystem { A [[1]] B [[1]] C [[1]] } }\n");
    try {
      parse_scenario(src, "broken.scn");
      FAIL("expected a scenario error");
    } catch (const ScenarioError& e) {
      CHECK(std::string(e.what()).find("broken.scn:3") != std::string::npos);
    }
  }
  SUBCASE("matrix dimension mismatches are rejected on load") {
    // D has width 3 but the ring provides two scalar outputs
    std::stringstream src(R"(
network {
  topology ring
  copies 3
  subsystem {
    A [[0.4]] B [[25.0]] C [[1.0]]
    D [[0.1, 0.1, 0.1]]
    R [[1.0]] noise_std [0.21]
  }
}
)");
    CHECK_THROWS_AS(parse_scenario(src, "broken.scn"), ScenarioError);
  }
  SUBCASE("unbalanced braces and empty files are rejected, not crashed") {
    std::stringstream open_brace("network { topology ring copies 2");
    CHECK_THROWS_AS(parse_scenario(open_brace, "broken.scn"), ScenarioError);
    std::stringstream stray_close("name x } network");
    CHECK_THROWS_AS(parse_scenario(stray_close, "broken.scn"), ScenarioError);
    std::stringstream empty("");
    CHECK_THROWS_AS(parse_scenario(empty, "broken.scn"), ScenarioError);
    std::stringstream bad_matrix("network { topology single copies 1 subsystem { A [[1,2],[3]] B [[1]] C [[1]] } }");
    CHECK_THROWS_AS(parse_scenario(bad_matrix, "broken.scn"), ScenarioError);
  }
  SUBCASE("unknown nonlinearity name") {
    std::stringstream src(R"(
network {
  topology single
  copies 1
  subsystem {
    A [[0.4]] B [[1.0]] C [[1.0]]
    phi cosine
  }
}
)");
    try {
      parse_scenario(src, "broken.scn");
      FAIL("expected a scenario error");
    } catch (const ScenarioError& e) {
      CHECK(std::string(e.what()).find("cosine") != std::string::npos);
    }
  }
}

namespace {

std::map<std::string, std::string> slurp_dir(const std::string& dir) {
  std::map<std::string, std::string> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    std::ifstream is(entry.path(), std::ios::binary);
    std::stringstream buf;
    buf << is.rdbuf();
    files[entry.path().filename().string()] = buf.str();
  }
  return files;
}

}  // namespace

TEST_CASE("pipeline artifacts are byte-identical across reruns and job counts") {
  Scenario scn;
  bool loaded = false;
  for (const char* base : {"../scenarios/", "../../scenarios/", "scenarios/"}) {
    try {
      scn = load_scenario(std::string(base) + "rooms_desk.scn");
      loaded = true;
      break;
    } catch (const std::runtime_error&) {
    }
  }
  REQUIRE(loaded);
  PipelineOptions a;
  a.out_dir = "determinism_a";
  a.runs = 300;
  a.jobs = 1;
  PipelineOptions b = a;
  b.out_dir = "determinism_b";
  b.jobs = 2;
  run_pipeline(scn, a);
  run_pipeline(scn, b);
  const auto fa = slurp_dir("determinism_a");
  const auto fb = slurp_dir("determinism_b");
  REQUIRE(fa.size() == fb.size());
  for (const auto& [name, content] : fa) {
    REQUIRE(fb.count(name) == 1);
    CHECK_MESSAGE(content == fb.at(name), name << " differs between reruns");
  }
  std::filesystem::remove_all("determinism_a");
  std::filesystem::remove_all("determinism_b");
}

namespace {

std::string scenario_base() {
  for (const char* base : {"../scenarios/", "../../scenarios/", "scenarios/"}) {
    std::ifstream probe(std::string(base) + "rooms_desk.scn");
    if (probe) return base;
  }
  return {};
}

}  // namespace

TEST_CASE("shipped scenarios load cleanly") {
  const std::string base = scenario_base();
  REQUIRE_FALSE(base.empty());
  const Scenario rooms = load_scenario(base + "rooms_desk.scn");
  CHECK(rooms.copies == 3);
  const Scenario rooms_full = load_scenario(base + "rooms.scn");
  CHECK(rooms_full.copies == 1000);
  const Scenario net = load_scenario(base + "network_desk.scn");
  CHECK(net.copies == 3);
  REQUIRE(net.reduced.has_value());
  CHECK(net.reduced->subsystem.state_dim() == 1);
  const Scenario net_full = load_scenario(base + "network.scn");
  CHECK(net_full.copies == 20);
  CHECK(net_full.reduced->cert.pin_gains);
}

TEST_CASE("full-scale network pipeline constants stay pinned") {
  const std::string base = scenario_base();
  REQUIRE_FALSE(base.empty());
  const Scenario scn = load_scenario(base + "network.scn");
  PipelineOptions opts;
  opts.out_dir = "pinned_check";
  opts.stages = {"verify", "compose", "bound"};  // certificate-level only
  const PipelineData data = run_pipeline(scn, opts);
  CHECK(data.exit_code == 0);
  REQUIRE(data.reduced_margin.has_value());
  CHECK(data.reduced_margin->verdict == CheckVerdict::satisfied);
  CHECK(data.reduced_margin->margin == doctest::Approx(3e-6 - 0.003).epsilon(1e-9));
  REQUIRE(data.structural.has_value());
  for (const auto& e : data.structural->entries) CHECK(e.residual <= 1e-12);
  // pinned gains imply the cross cycles sit exactly on the identity
  REQUIRE(data.cycles_stage1.has_value());
  CHECK(data.cycles_stage1->verdict == CheckVerdict::boundary);
  CHECK(data.cycles_stage1->used_reduction);  // 20 subsystems exceed the cap
  CHECK(data.cycles_stage1->max_cycle_mean == doctest::Approx(1.0).epsilon(1e-9));
  REQUIRE(data.cycles_stage2.has_value());
  CHECK(data.cycles_stage2->verdict == CheckVerdict::satisfied);
  // first stage carries no offset or external gain: its bound collapses to
  // the initial-gap ratio, zero here
  REQUIRE(data.bounds.size() == 2);
  CHECK(data.bounds.front().stage1->delta_hat == 0.0);
  CHECK(data.bounds.front().stage2->epsilon == doctest::Approx(0.125));
  CHECK(data.bounds.front().total->epsilon == doctest::Approx(0.25));
  // frozen two-stage bound at the published grid resolution: the 0.5-radius
  // guarantee computes to about 93%, beside the reported 92%
  CHECK(data.bounds[1].total->epsilon == doctest::Approx(0.5));
  CHECK(data.bounds[1].total->delta_hat == doctest::Approx(0.0665813).epsilon(1e-5));
  std::filesystem::remove_all("pinned_check");
}
