#include "stochabs/scenario.hpp"

#include <cctype>
#include <fstream>
#include <limits>
#include <memory>
#include <sstream>

namespace stochabs {

namespace {

struct Token {
  std::string text;
  int line = 0;
};

class Lexer {
 public:
  Lexer(std::istream& is, std::string file) : file_(std::move(file)) {
    std::string line;
    int no = 0;
    while (std::getline(is, line)) {
      ++no;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      std::size_t i = 0;
      while (i < line.size()) {
        const char c = line[i];
        if (std::isspace(static_cast<unsigned char>(c))) { ++i; continue; }
        if (c == '{' || c == '}' || c == '[' || c == ']' || c == ',') {
          tokens_.push_back({std::string(1, c), no});
          ++i;
          continue;
        }
        std::size_t j = i;
        while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j])) &&
               std::string("{}[],").find(line[j]) == std::string::npos)
          ++j;
        tokens_.push_back({line.substr(i, j - i), no});
        i = j;
      }
    }
  }

  bool done() const { return pos_ >= tokens_.size(); }
  const Token& peek() const {
    if (done()) throw ScenarioError(file_, last_line(), "unexpected end of file");
    return tokens_[pos_];
  }
  Token next() {
    const Token t = peek();
    ++pos_;
    return t;
  }
  void expect(const std::string& text) {
    const Token t = next();
    if (t.text != text)
      throw ScenarioError(file_, t.line, "expected '" + text + "', got '" + t.text + "'");
  }
  int last_line() const { return tokens_.empty() ? 0 : tokens_.back().line; }
  const std::string& file() const { return file_; }

 private:
  std::string file_;
  std::vector<Token> tokens_;
  std::size_t pos_ = 0;
};

struct Value;

struct Block {
  int line = 0;
  std::vector<std::pair<std::string, Value>> entries;

  const Value* find(const std::string& key) const;
  const Value& require(const std::string& key, const std::string& file) const;
  bool has(const std::string& key) const { return find(key) != nullptr; }
};

struct Value {
  enum class Kind { atom, vector, matrix, block } kind = Kind::atom;
  int line = 0;
  std::string atom;
  std::vector<double> vec;
  Matrix mat;
  std::shared_ptr<Block> block;
};

const Value* Block::find(const std::string& key) const {
  for (const auto& [k, v] : entries)
    if (k == key) return &v;
  return nullptr;
}

const Value& Block::require(const std::string& key, const std::string& file) const {
  const Value* v = find(key);
  if (!v) throw ScenarioError(file, line, "missing required key '" + key + "'");
  return *v;
}

double parse_number(const std::string& file, const Token& t) {
  if (t.text == "inf") return std::numeric_limits<double>::infinity();
  if (t.text == "-inf") return -std::numeric_limits<double>::infinity();
  try {
    std::size_t used = 0;
    const double v = std::stod(t.text, &used);
    if (used != t.text.size()) throw std::invalid_argument("");
    return v;
  } catch (const std::exception&) {
    throw ScenarioError(file, t.line, "expected a number, got '" + t.text + "'");
  }
}

std::vector<double> parse_row(Lexer& lx) {
  std::vector<double> row;
  lx.expect("[");
  if (lx.peek().text == "]") { lx.next(); return row; }
  while (true) {
    row.push_back(parse_number(lx.file(), lx.next()));
    const Token t = lx.next();
    if (t.text == "]") break;
    if (t.text != ",") throw ScenarioError(lx.file(), t.line, "expected ',' or ']'");
  }
  return row;
}

Value parse_value(Lexer& lx);

Block parse_block_body(Lexer& lx, int line) {
  Block b;
  b.line = line;
  while (!lx.done() && lx.peek().text != "}") {
    Token key = lx.next();
    b.entries.emplace_back(key.text, parse_value(lx));
  }
  return b;
}

Value parse_value(Lexer& lx) {
  const Token& t = lx.peek();
  Value v;
  v.line = t.line;
  if (t.text == "{") {
    lx.next();
    v.kind = Value::Kind::block;
    v.block = std::make_shared<Block>(parse_block_body(lx, t.line));
    lx.expect("}");
    return v;
  }
  if (t.text == "[") {
    lx.next();
    if (!lx.done() && lx.peek().text == "[") {  // matrix
      std::vector<std::vector<double>> rows;
      while (true) {
        rows.push_back(parse_row(lx));
        const Token sep = lx.next();
        if (sep.text == "]") break;
        if (sep.text != ",") throw ScenarioError(lx.file(), sep.line, "expected ',' or ']'");
      }
      v.kind = Value::Kind::matrix;
      const std::size_t cols = rows.empty() ? 0 : rows.front().size();
      for (const auto& r : rows)
        if (r.size() != cols)
          throw ScenarioError(lx.file(), v.line, "matrix rows have unequal lengths");
      v.mat = Matrix::Zero(static_cast<long>(rows.size()), static_cast<long>(cols));
      for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < cols; ++j) v.mat(i, j) = rows[i][j];
      return v;
    }
    // vector: re-parse as a row (we already consumed '[')
    v.kind = Value::Kind::vector;
    if (!lx.done() && lx.peek().text == "]") { lx.next(); return v; }
    while (true) {
      v.vec.push_back(parse_number(lx.file(), lx.next()));
      const Token sep = lx.next();
      if (sep.text == "]") break;
      if (sep.text != ",") throw ScenarioError(lx.file(), sep.line, "expected ',' or ']'");
    }
    return v;
  }
  v.kind = Value::Kind::atom;
  v.atom = lx.next().text;
  return v;
}

// typed getters -------------------------------------------------------------

struct Reader {
  std::string file;

  Matrix matrix(const Value& v) const {
    if (v.kind == Value::Kind::matrix) return v.mat;
    if (v.kind == Value::Kind::block) {
      // compact fill form: { rows r cols c fill v diag d }
      const Block& b = *v.block;
      const int rows = static_cast<int>(number(b.require("rows", file)));
      const int cols = static_cast<int>(number(b.require("cols", file)));
      if (rows < 0 || cols < 0) throw ScenarioError(file, v.line, "matrix sizes must be nonnegative");
      Matrix m = Matrix::Constant(rows, cols, b.has("fill") ? number(*b.find("fill")) : 0.0);
      if (b.has("diag")) m.diagonal().array() += number(*b.find("diag"));
      return m;
    }
    throw ScenarioError(file, v.line,
                        "expected a matrix [[...],...] or { rows r cols c fill v diag d }");
  }
  Vector vector(const Value& v) const {
    if (v.kind != Value::Kind::vector)
      throw ScenarioError(file, v.line, "expected a vector [...]");
    Vector out(static_cast<long>(v.vec.size()));
    for (std::size_t i = 0; i < v.vec.size(); ++i) out(static_cast<long>(i)) = v.vec[i];
    return out;
  }
  std::vector<int> int_vector(const Value& v) const {
    if (v.kind != Value::Kind::vector)
      throw ScenarioError(file, v.line, "expected a vector [...]");
    std::vector<int> out;
    for (double d : v.vec) {
      if (d != static_cast<int>(d))
        throw ScenarioError(file, v.line, "expected integers");
      out.push_back(static_cast<int>(d));
    }
    return out;
  }
  double number(const Value& v) const {
    if (v.kind != Value::Kind::atom)
      throw ScenarioError(file, v.line, "expected a number");
    return parse_number(file, {v.atom, v.line});
  }
  std::string word(const Value& v) const {
    if (v.kind != Value::Kind::atom) throw ScenarioError(file, v.line, "expected a word");
    return v.atom;
  }
  const Block& block(const Value& v) const {
    if (v.kind != Value::Kind::block) throw ScenarioError(file, v.line, "expected a { block }");
    return *v.block;
  }
};

NonlinearSCS read_subsystem(const Reader& rd, const Block& b) {
  NonlinearSCS sys;
  sys.A = rd.matrix(b.require("A", rd.file));
  sys.B = rd.matrix(b.require("B", rd.file));
  sys.C = rd.matrix(b.require("C", rd.file));
  const int n = sys.state_dim();
  sys.D = b.has("D") ? rd.matrix(*b.find("D")) : Matrix::Zero(n, 0);
  sys.R = b.has("R") ? rd.matrix(*b.find("R")) : Matrix::Zero(n, 0);
  if (b.has("noise_std")) sys.noise_std = rd.vector(*b.find("noise_std"));
  else sys.noise_std = Vector::Zero(sys.R.cols());
  if (b.has("bias")) sys.bias = rd.vector(*b.find("bias"));
  auto read_term = [&rd, n](const Block& tb) {
    NonlinearTerm t;
    t.E = tb.has("E") ? rd.matrix(*tb.find("E")) : Matrix::Zero(n, 1);
    t.F = tb.has("F") ? rd.matrix(*tb.find("F")) : Matrix::Zero(1, n);
    const std::string phi_name = tb.has("phi") ? rd.word(*tb.find("phi")) : "zero";
    try {
      if (phi_name == "tabulated") {
        const Matrix pts = rd.matrix(tb.require("phi_table", rd.file));
        if (pts.cols() != 2) throw std::invalid_argument("phi_table needs two columns");
        std::vector<std::pair<double, double>> table;
        for (int r = 0; r < pts.rows(); ++r) table.emplace_back(pts(r, 0), pts(r, 1));
        t.phi = ScalarFn::tabulated_fn(std::move(table));
      } else {
        t.phi = ScalarFn::from_name(phi_name);
      }
    } catch (const std::invalid_argument& e) {
      throw ScenarioError(rd.file, tb.find("phi") ? tb.find("phi")->line : tb.line, e.what());
    }
    t.slope_a = tb.has("slope_a") ? rd.number(*tb.find("slope_a")) : t.phi.default_slope_lo();
    t.slope_b = tb.has("slope_b") ? rd.number(*tb.find("slope_b")) : t.phi.default_slope_hi();
    return t;
  };
  if (b.has("E") || b.has("phi")) sys.nonlin.push_back(read_term(b));
  for (const auto& [key, val] : b.entries) {
    if (key == "nonlinearity") sys.nonlin.push_back(read_term(rd.block(val)));
    if (key != "bilinear") continue;
    const Block& bb = rd.block(val);
    BilinearTerm term;
    term.input_index = static_cast<int>(rd.number(bb.require("input", rd.file)));
    term.N = rd.matrix(bb.require("N", rd.file));
    sys.bilinear.push_back(term);
  }
  try {
    sys.validate();
  } catch (const std::invalid_argument& e) {
    throw ScenarioError(rd.file, b.line, e.what());
  }
  if (!spot_check_slopes(sys).ok)
    throw ScenarioError(rd.file, b.line,
                        "declared slope bounds are violated by the nonlinearity on a sample grid");
  return sys;
}

Grid read_grid(const Reader& rd, const Block& b) {
  const Vector lo = rd.vector(b.require("lower", rd.file));
  const Vector hi = rd.vector(b.require("upper", rd.file));
  const std::vector<int> cells = rd.int_vector(b.require("cells", rd.file));
  try {
    return Grid::uniform(lo, hi, cells);
  } catch (const std::invalid_argument& e) {
    throw ScenarioError(rd.file, b.line, e.what());
  }
}

CertificateSpec read_certificate(const Reader& rd, const Block& b) {
  CertificateSpec c;
  c.M = rd.matrix(b.require("M", rd.file));
  c.K = rd.matrix(b.require("K", rd.file));
  auto opt = [&](const char* key) -> std::optional<Matrix> {
    if (!b.has(key)) return std::nullopt;
    return rd.matrix(*b.find(key));
  };
  c.L1 = opt("L1");
  c.P = opt("P");
  c.R_tilde = opt("R_tilde");
  c.Q = opt("Q");
  c.S = opt("S");
  c.L2 = opt("L2");
  c.kappa_hat = rd.number(b.require("kappa_hat", rd.file));
  if (b.has("pi")) c.tuning.pi = rd.number(*b.find("pi"));
  if (b.has("pi_tilde")) c.tuning.pi_tilde = rd.number(*b.find("pi_tilde"));
  if (b.has("delta_tilde")) c.tuning.delta_tilde = rd.number(*b.find("delta_tilde"));
  if (b.has("kappa_tilde")) c.tuning.kappa_tilde = rd.number(*b.find("kappa_tilde"));
  if (b.has("pin_gains")) c.pin_gains = rd.word(*b.find("pin_gains")) == "true";
  if (b.has("targets")) {
    const Block& t = rd.block(*b.find("targets"));
    auto num = [&](const char* key) -> std::optional<double> {
      if (!t.has(key)) return std::nullopt;
      return rd.number(*t.find(key));
    };
    c.targets.kappa_coef = num("kappa_coef");
    c.targets.rho_int_coef = num("rho_int_coef");
    c.targets.rho_ext_coef = num("rho_ext_coef");
    c.targets.psi = num("psi");
    c.targets.psi_per_delta2 = num("psi_per_delta2");
  }
  try {
    c.tuning.validate(c.kappa_hat);
  } catch (const std::invalid_argument& e) {
    throw ScenarioError(rd.file, b.line, e.what());
  }
  return c;
}

}  // namespace

Scenario parse_scenario(std::istream& is, const std::string& filename) {
  Lexer lx(is, filename);
  Block root = parse_block_body(lx, 1);
  if (!lx.done()) throw ScenarioError(filename, lx.peek().line, "unexpected '}'");
  Reader rd{filename};

  Scenario scn;
  scn.source_file = filename;
  scn.name = root.has("name") ? rd.word(*root.find("name")) : "scenario";

  const Block& netb = rd.block(root.require("network", filename));
  scn.copies = static_cast<int>(rd.number(netb.require("copies", filename)));
  const std::string topo = rd.word(netb.require("topology", filename));
  if (topo == "ring") scn.topology = Topology::ring;
  else if (topo == "complete") scn.topology = Topology::complete;
  else if (topo == "single") scn.topology = Topology::single;
  else throw ScenarioError(filename, netb.find("topology")->line, "unknown topology '" + topo + "'");
  scn.unit = read_subsystem(rd, rd.block(netb.require("subsystem", filename)));
  scn.initial = root.has("initial") ? rd.vector(*root.find("initial"))
                                    : Vector::Zero(scn.unit.state_dim());
  if (scn.initial.size() != scn.unit.state_dim())
    throw ScenarioError(filename, root.find("initial") ? root.find("initial")->line : root.line,
                        "initial state length must match the subsystem state dimension");

  if (root.has("reduced_stage")) {
    const Block& rb = rd.block(*root.find("reduced_stage"));
    ReducedStageSpec stage;
    stage.subsystem = read_subsystem(rd, rd.block(rb.require("subsystem", filename)));
    stage.cert = read_certificate(rd, rd.block(rb.require("certificate", filename)));
    stage.initial = rb.has("initial") ? rd.vector(*rb.find("initial"))
                                      : Vector::Zero(stage.subsystem.state_dim());
    if (stage.initial.size() != stage.subsystem.state_dim())
      throw ScenarioError(filename, rb.line, "reduced initial state dimension mismatch");
    scn.reduced = std::move(stage);
  }

  if (root.has("finite_stage")) {
    const Block& fb = rd.block(*root.find("finite_stage"));
    FiniteStageSpec stage;
    stage.cert = read_certificate(rd, rd.block(fb.require("certificate", filename)));
    stage.state_grid = read_grid(rd, rd.block(fb.require("state_grid", filename)));
    stage.input_grid = read_grid(rd, rd.block(fb.require("input_grid", filename)));
    if (fb.has("internal_cells")) stage.internal_cells = rd.int_vector(*fb.find("internal_cells"));
    if (fb.has("internal_cells_uniform"))
      stage.internal_cells_uniform = static_cast<int>(rd.number(*fb.find("internal_cells_uniform")));
    if (fb.has("delta_tilde_f")) stage.delta_tilde_f = rd.number(*fb.find("delta_tilde_f"));
    if (fb.has("bar_lambda")) stage.bar_lambda = rd.number(*fb.find("bar_lambda"));
    const NonlinearSCS& gridded = scn.reduced ? scn.reduced->subsystem : scn.unit;
    if (stage.state_grid.dims() != gridded.state_dim())
      throw ScenarioError(filename, fb.line, "state grid dimension must match the gridded subsystem");
    if (stage.input_grid.dims() != gridded.input_dim())
      throw ScenarioError(filename, fb.line, "input grid dimension must match the gridded subsystem");
    scn.finite = std::move(stage);
  }

  if (root.has("objective")) {
    const Block& ob = rd.block(*root.find("objective"));
    scn.objective.safe_lower = ob.has("safe_lower") ? rd.vector(*ob.find("safe_lower")) : Vector();
    scn.objective.safe_upper = ob.has("safe_upper") ? rd.vector(*ob.find("safe_upper")) : Vector();
    if (scn.objective.safe_lower.size() != scn.objective.safe_upper.size())
      throw ScenarioError(filename, ob.line, "safe box bounds must have equal lengths");
    scn.objective.horizon = static_cast<int>(rd.number(ob.require("horizon", filename)));
    if (ob.has("epsilons"))
      for (double e : rd.vector(*ob.find("epsilons"))) scn.objective.epsilons.push_back(e);
    if (ob.has("internal_mode")) {
      const std::string m = rd.word(*ob.find("internal_mode"));
      if (m == "fixed") scn.objective.internal_mode = InternalMode::fixed;
      else if (m == "robust_min") scn.objective.internal_mode = InternalMode::robust_min;
      else if (m == "nominal_trace") scn.objective.internal_mode = InternalMode::nominal_trace;
      else throw ScenarioError(filename, ob.find("internal_mode")->line, "unknown internal mode '" + m + "'");
    }
    if (ob.has("kappa_hat_eq25")) {
      const std::string v = rd.word(*ob.find("kappa_hat_eq25"));
      if (v != "auto") scn.objective.kappa_hat_eq25 = parse_number(filename, {v, ob.find("kappa_hat_eq25")->line});
    }
  }

  if (root.has("simulation")) {
    const Block& sb = rd.block(*root.find("simulation"));
    if (sb.has("runs")) scn.simulation.runs = static_cast<int>(rd.number(*sb.find("runs")));
    if (sb.has("seed")) scn.simulation.seed = static_cast<std::uint64_t>(rd.number(*sb.find("seed")));
  }

  // cross-checks that need the whole network
  const Interconnection net = scn.build_network();
  const auto rep = validate_interconnection(net);
  if (!rep.pass)
    throw ScenarioError(filename, netb.line,
                        "internal input width of D does not match the wired outputs");
  return scn;
}

Scenario load_scenario(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open scenario file " + path);
  return parse_scenario(is, path);
}

}  // namespace stochabs
