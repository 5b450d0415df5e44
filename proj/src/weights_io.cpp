#include "fidolab/weights_io.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace fidolab {

namespace {

constexpr char kMagic[5] = {'F', 'I', 'D', 'O', '1'};

void write_u64(std::ostream& out, std::uint64_t v) {
  unsigned char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(buf), 8);
}

std::uint64_t read_u64(std::istream& in, const char* what) {
  unsigned char buf[8];
  in.read(reinterpret_cast<char*>(buf), 8);
  if (!in) throw std::runtime_error(std::string("weights: truncated file reading ") + what);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return v;
}

bool config_equal(const ModelConfig& a, const ModelConfig& b) {
  return a.d == b.d && a.h == b.h && a.d_ff == b.d_ff && a.L_enc == b.L_enc &&
         a.L_dec == b.L_dec && a.K == b.K && a.attention_kind == b.attention_kind &&
         a.vocab == b.vocab && a.n_p == b.n_p && a.n_passages == b.n_passages &&
         a.n_t_max == b.n_t_max;
}

}  // namespace

void save_weights(const std::string& path, const FidModel& model) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("weights: cannot open \"" + path + "\" for writing");

  out.write(kMagic, sizeof(kMagic));
  const std::string cfg_json = model_config_to_json(model.config());
  write_u64(out, cfg_json.size());
  out.write(cfg_json.data(), static_cast<std::streamsize>(cfg_json.size()));

  auto& w = const_cast<Weights&>(model.weights());
  visit_weights(model.config(), w, [&](const std::string& name, Matrix& m, bool) {
    write_u64(out, name.size());
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u64(out, m.rows());
    write_u64(out, m.cols());
    out.write(reinterpret_cast<const char*>(m.data().data()),
              static_cast<std::streamsize>(m.size_bytes()));
  });
  if (!out) throw std::runtime_error("weights: write to \"" + path + "\" failed");
}

FidModel load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("weights: cannot open \"" + path + "\"");

  char magic[sizeof(kMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw std::runtime_error("weights: bad magic in \"" + path + "\" (not a FIDO1 file)");
  }

  const std::uint64_t cfg_len = read_u64(in, "config length");
  std::string cfg_json(cfg_len, '\0');
  in.read(cfg_json.data(), static_cast<std::streamsize>(cfg_len));
  if (!in) throw std::runtime_error("weights: truncated file reading config");
  const ModelConfig cfg = model_config_from_json(cfg_json);

  Weights w;
  visit_weights(cfg, w, [&](const std::string& name, Matrix& m, bool) {
    const std::uint64_t name_len = read_u64(in, "record name length");
    std::string rec_name(name_len, '\0');
    in.read(rec_name.data(), static_cast<std::streamsize>(name_len));
    if (!in) throw std::runtime_error("weights: truncated file reading record name");
    if (rec_name != name) {
      throw std::runtime_error("weights: expected record \"" + name + "\", found \"" +
                               rec_name + "\"");
    }
    const std::uint64_t rows = read_u64(in, "rows");
    const std::uint64_t cols = read_u64(in, "cols");
    if (rows != m.rows() || cols != m.cols()) {
      throw std::runtime_error("weights: record \"" + name + "\" has shape " +
                               std::to_string(rows) + "x" + std::to_string(cols) +
                               ", expected " + std::to_string(m.rows()) + "x" +
                               std::to_string(m.cols()));
    }
    in.read(reinterpret_cast<char*>(m.data().data()),
            static_cast<std::streamsize>(m.size_bytes()));
    if (!in) throw std::runtime_error("weights: truncated file reading \"" + name + "\"");
  });
  return FidModel(cfg, std::move(w));
}

FidModel load_model_checked(const std::string& path, const ModelConfig& expected) {
  FidModel model = load_model(path);
  if (!config_equal(model.config(), expected)) {
    throw std::runtime_error("weights: config embedded in \"" + path +
                             "\" does not match the supplied config");
  }
  return model;
}

}  // namespace fidolab
