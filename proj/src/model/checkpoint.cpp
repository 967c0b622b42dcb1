#include "f2d2/model/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace f2d2::model {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'F', '2', 'D', '2', 'C', 'K', 'P', 'T'};

class Writer {
 public:
  template <typename T>
  void put(T v) {
    const auto* p = reinterpret_cast<const char*>(&v);
    buf_.append(p, sizeof(T));
  }
  void put_string(const std::string& s) {
    put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    buf_.append(s);
  }
  void put_doubles(const double* data, std::size_t n) {
    buf_.append(reinterpret_cast<const char*>(data), n * sizeof(double));
  }
  void put_matrix(const Matrix& m) {
    put<std::uint64_t>(static_cast<std::uint64_t>(m.rows()));
    put<std::uint64_t>(static_cast<std::uint64_t>(m.cols()));
    put_doubles(m.data(), static_cast<std::size_t>(m.size()));
  }
  std::string& buffer() { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  Reader(const char* data, std::size_t size) : data_(data), size_(size) {}

  template <typename T>
  T get() {
    T v;
    need(sizeof(T));
    std::memcpy(&v, data_ + at_, sizeof(T));
    at_ += sizeof(T);
    return v;
  }
  std::string get_string() {
    const auto n = get<std::uint32_t>();
    need(n);
    std::string s(data_ + at_, n);
    at_ += n;
    return s;
  }
  void get_doubles(double* out, std::size_t n) {
    need(n * sizeof(double));
    std::memcpy(out, data_ + at_, n * sizeof(double));
    at_ += n * sizeof(double);
  }
  Matrix get_matrix() {
    const auto rows = get<std::uint64_t>();
    const auto cols = get<std::uint64_t>();
    if (rows > (1u << 24) || cols > (1u << 24)) throw CheckpointError("checkpoint: implausible matrix shape");
    Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    get_doubles(m.data(), static_cast<std::size_t>(m.size()));
    return m;
  }
  bool done() const { return at_ == size_; }

 private:
  void need(std::size_t n) const {
    if (size_ - at_ < n) throw CheckpointError("checkpoint: truncated file");
  }
  const char* data_;
  std::size_t size_;
  std::size_t at_ = 0;
};

std::uint32_t crc_of(const char* data, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, reinterpret_cast<const Bytef*>(data), static_cast<uInt>(n));
  return static_cast<std::uint32_t>(crc);
}

void write_architecture(Writer& w, const Architecture& a) {
  w.put<std::uint32_t>(static_cast<std::uint32_t>(a.data_dim));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(a.hidden_width));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(a.hidden_layers));
  w.put<std::uint8_t>(static_cast<std::uint8_t>(a.activation));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(a.div_head_hidden.size()));
  for (int h : a.div_head_hidden) w.put<std::uint32_t>(static_cast<std::uint32_t>(h));
  w.put<std::uint8_t>(static_cast<std::uint8_t>(a.time_embedding));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(a.embedding_frequencies));
  w.put<double>(a.div_scale);
  w.put<std::uint8_t>(a.zero_init_heads ? 1 : 0);
}

Architecture read_architecture(Reader& r) {
  Architecture a;
  a.data_dim = static_cast<int>(r.get<std::uint32_t>());
  a.hidden_width = static_cast<int>(r.get<std::uint32_t>());
  a.hidden_layers = static_cast<int>(r.get<std::uint32_t>());
  const auto act = r.get<std::uint8_t>();
  if (act > 1) throw CheckpointError("checkpoint: unknown activation code");
  a.activation = static_cast<Activation>(act);
  const auto n_div = r.get<std::uint32_t>();
  if (n_div > 64) throw CheckpointError("checkpoint: implausible divergence head depth");
  a.div_head_hidden.clear();
  for (std::uint32_t i = 0; i < n_div; ++i) a.div_head_hidden.push_back(static_cast<int>(r.get<std::uint32_t>()));
  const auto emb = r.get<std::uint8_t>();
  if (emb > 1) throw CheckpointError("checkpoint: unknown time embedding code");
  a.time_embedding = static_cast<TimeEmbedding>(emb);
  a.embedding_frequencies = static_cast<int>(r.get<std::uint32_t>());
  a.div_scale = r.get<double>();
  a.zero_init_heads = r.get<std::uint8_t>() != 0;
  return a;
}

}  // namespace

Checkpoint Checkpoint::from_model(const JointFlowMapModel& model, std::string stage, std::uint64_t step) {
  Checkpoint c;
  c.architecture = model.architecture();
  c.stage = std::move(stage);
  c.step = step;
  c.parameters = model.flat_parameters();
  c.divergence_trained = model.divergence_trained();
  return c;
}

JointFlowMapModel Checkpoint::to_model() const {
  RngStream unused(0);
  JointFlowMapModel m(architecture, unused);
  if (parameters.size() != m.parameter_count()) {
    throw CheckpointError("checkpoint: parameter count " + std::to_string(parameters.size()) +
                          " does not match the stored architecture (" +
                          std::to_string(m.parameter_count()) + ")");
  }
  m.set_flat_parameters(parameters);
  m.set_divergence_trained(divergence_trained);
  return m;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  Writer w;
  w.buffer().append(kMagic, sizeof(kMagic));
  w.put<std::uint32_t>(kCheckpointVersion);
  write_architecture(w, ckpt.architecture);
  w.put_string(ckpt.stage);
  w.put<std::uint64_t>(ckpt.step);
  w.put<std::uint64_t>(static_cast<std::uint64_t>(ckpt.parameters.size()));
  w.put_doubles(ckpt.parameters.data(), static_cast<std::size_t>(ckpt.parameters.size()));

  w.put<std::uint8_t>(ckpt.optimizer ? 1 : 0);
  if (ckpt.optimizer) {
    const ad::AdamState& s = *ckpt.optimizer;
    w.put<std::int64_t>(s.step);
    w.put<double>(s.config.beta1);
    w.put<double>(s.config.beta2);
    w.put<double>(s.config.eps);
    w.put<double>(s.config.lr);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(s.first_moment.size()));
    for (const auto& m : s.first_moment) w.put_matrix(m);
    for (const auto& v : s.second_moment) w.put_matrix(v);
  }

  w.put<std::uint32_t>(static_cast<std::uint32_t>(ckpt.streams.size()));
  for (const auto& st : ckpt.streams) {
    w.put_string(st.name);
    w.put<std::uint64_t>(st.key);
    w.put<std::uint64_t>(st.position);
  }
  w.put<std::uint32_t>(ckpt.divergence_trained ? 1u : 0u);

  const std::uint32_t crc = crc_of(w.buffer().data(), w.buffer().size());
  w.put<std::uint32_t>(crc);

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("checkpoint: cannot open '" + tmp.string() + "' for writing");
    out.write(w.buffer().data(), static_cast<std::streamsize>(w.buffer().size()));
    if (!out) throw CheckpointError("checkpoint: write failed for '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("checkpoint: cannot open '" + path.string() + "'");
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < sizeof(kMagic) + 8 || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw CheckpointError("checkpoint: '" + path.string() + "' is not an F2D2 checkpoint");
  }
  Reader header(bytes.data() + sizeof(kMagic), bytes.size() - sizeof(kMagic));
  const auto version = header.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint: unsupported version " + std::to_string(version) + " (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  }
  const std::size_t body = bytes.size() - 4;
  std::uint32_t stored_crc;
  std::memcpy(&stored_crc, bytes.data() + body, 4);
  if (crc_of(bytes.data(), body) != stored_crc) {
    throw CheckpointError("checkpoint: checksum mismatch in '" + path.string() + "' (file is corrupt)");
  }

  Reader r(bytes.data() + sizeof(kMagic) + 4, body - sizeof(kMagic) - 4);
  Checkpoint c;
  c.architecture = read_architecture(r);
  c.stage = r.get_string();
  c.step = r.get<std::uint64_t>();
  const auto n = r.get<std::uint64_t>();
  if (n > (1ull << 32)) throw CheckpointError("checkpoint: implausible parameter count");
  c.parameters.resize(static_cast<Eigen::Index>(n));
  r.get_doubles(c.parameters.data(), static_cast<std::size_t>(n));

  if (r.get<std::uint8_t>() != 0) {
    ad::AdamState s;
    s.step = r.get<std::int64_t>();
    s.config.beta1 = r.get<double>();
    s.config.beta2 = r.get<double>();
    s.config.eps = r.get<double>();
    s.config.lr = r.get<double>();
    const auto count = r.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < count; ++i) s.first_moment.push_back(r.get_matrix());
    for (std::uint32_t i = 0; i < count; ++i) s.second_moment.push_back(r.get_matrix());
    c.optimizer = std::move(s);
  }
  const auto n_streams = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n_streams; ++i) {
    NamedStream st;
    st.name = r.get_string();
    st.key = r.get<std::uint64_t>();
    st.position = r.get<std::uint64_t>();
    c.streams.push_back(std::move(st));
  }
  const auto flags = r.get<std::uint32_t>();
  c.divergence_trained = (flags & 1u) != 0;
  if (!r.done()) throw CheckpointError("checkpoint: trailing bytes before checksum");
  return c;
}

}  // namespace f2d2::model
