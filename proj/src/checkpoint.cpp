#include "kdiffe/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "kdiffe/errors.hpp"

namespace kdiffe {

namespace {

constexpr char kMagic[8] = {'K', 'D', 'F', 'C', 'K', 'P', 'T', '\0'};

class Writer {
 public:
  explicit Writer(std::ofstream& out) : out_(out) {}
  void u64(std::uint64_t v) { out_.write(reinterpret_cast<const char*>(&v), sizeof v); }
  void str(const std::string& s) {
    u64(s.size());
    out_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  void doubles(std::span<const double> v) {
    u64(v.size());
    out_.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size_bytes()));
  }
  void matrix(const Matrix& m) {
    u64(m.rows());
    u64(m.cols());
    out_.write(reinterpret_cast<const char*>(m.values().data()), static_cast<std::streamsize>(m.values().size_bytes()));
  }

 private:
  std::ofstream& out_;
};

class Reader {
 public:
  explicit Reader(std::ifstream& in) : in_(in) {}
  std::uint64_t u64() {
    std::uint64_t v = 0;
    read(&v, sizeof v);
    return v;
  }
  std::string str() {
    std::string s(checked_size(u64(), 1), '\0');
    read(s.data(), s.size());
    return s;
  }
  std::vector<double> doubles() {
    std::vector<double> v(checked_size(u64(), sizeof(double)));
    read(v.data(), v.size() * sizeof(double));
    return v;
  }
  Matrix matrix() {
    const auto rows = u64();
    const auto cols = u64();
    if (cols != 0 && rows > (std::uint64_t{1} << 40) / cols) throw DataError("checkpoint matrix too large");
    Matrix m(rows, checked_size(cols, 1));
    checked_size(m.size(), sizeof(double));
    read(m.values().data(), m.values().size_bytes());
    return m;
  }

 private:
  void read(void* dst, std::size_t n) {
    in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) throw DataError("checkpoint is truncated");
  }
  // Guards against allocating absurd sizes from a corrupt length field.
  std::size_t checked_size(std::uint64_t n, std::size_t elem) {
    if (n > (std::uint64_t{1} << 36) / elem) throw DataError("checkpoint length field is corrupt");
    return static_cast<std::size_t>(n);
  }
  std::ifstream& in_;
};

}  // namespace

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  Writer w(out);
  out.write(kMagic, sizeof kMagic);
  w.u64(kCheckpointVersion);
  w.str(model.config.to_text());
  w.doubles(model.schedule.beta);
  w.doubles(model.schedule.alpha_bar);
  for (const Matrix* m : {&model.tables.user, &model.tables.item, &model.tables.kg.entity, &model.tables.kg.relation,
                          &model.tables.kg.w, &model.denoiser.w1, &model.denoiser.b1, &model.denoiser.w2,
                          &model.denoiser.b2, &model.denoiser.step_embedding})
    w.matrix(*m);
  w.u64(model.rng_state.size());
  for (const auto& s : model.rng_state) w.str(s);
  w.u64(model.epochs_done);
  if (!out) throw DataError("failed writing checkpoint " + path.string());
}

Model load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  char magic[sizeof kMagic];
  in.read(magic, sizeof magic);
  if (in.gcount() != sizeof magic || std::memcmp(magic, kMagic, sizeof magic) != 0)
    throw DataError(path.string() + " is not a checkpoint");
  Reader r(in);
  const auto version = r.u64();
  if (version != kCheckpointVersion) throw DataError("unsupported checkpoint version " + std::to_string(version));

  Model m;
  try {
    m.config = TrainConfig::from_text(r.str());
  } catch (const Error& e) {
    throw DataError(std::string("checkpoint config is invalid: ") + e.what());
  }
  m.schedule.beta = r.doubles();
  m.schedule.alpha_bar = r.doubles();
  for (Matrix* mat : {&m.tables.user, &m.tables.item, &m.tables.kg.entity, &m.tables.kg.relation, &m.tables.kg.w,
                      &m.denoiser.w1, &m.denoiser.b1, &m.denoiser.w2, &m.denoiser.b2, &m.denoiser.step_embedding})
    *mat = r.matrix();
  const auto nstates = r.u64();
  if (nstates > 64) throw DataError("checkpoint length field is corrupt");
  for (std::uint64_t k = 0; k < nstates; ++k) m.rng_state.push_back(r.str());
  m.epochs_done = r.u64();
  if (m.tables.user.cols() != m.config.dim || m.tables.item.cols() != m.config.dim)
    throw DataError("checkpoint tables do not match its config");
  return m;
}

}  // namespace kdiffe
