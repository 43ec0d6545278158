#include <cstdio>
#include <fstream>
#include <string>

#include "sbthermo/dataset.hpp"
#include "sbthermo/detail/binary_io.hpp"
#include "sbthermo/error.hpp"

namespace sbthermo::dataset {
namespace {

constexpr std::string_view kMagic = "PNDS";
constexpr std::size_t kHeaderBytes = 80;

void encode_header(detail::ByteWriter& w, const Header& h) {
  w.bytes(kMagic);
  w.put<std::uint32_t>(h.version);
  w.put<std::uint16_t>(static_cast<std::uint16_t>(h.sideband_count));
  w.put<std::uint8_t>(static_cast<std::uint8_t>(h.mode));
  w.put<std::uint8_t>(h.noisy ? 1 : 0);
  w.put<std::uint32_t>(h.noise_trials);
  w.put<std::uint64_t>(h.count);
  w.put<std::uint64_t>(h.seed);
  for (double v : {h.box.nbar_min, h.box.nbar_max, h.box.eta_min, h.box.eta_max,
                   h.box.omega_t_min, h.box.omega_t_max})
    w.put(v);
}

Header decode_header(detail::ByteReader& r) {
  if (r.bytes(kMagic.size(), "magic") != kMagic)
    fail(ErrorCode::kFormat, "bad magic: not a PNDS dataset file");
  Header h;
  h.version = r.get<std::uint32_t>("format version");
  if (h.version != kFormatVersion)
    fail(ErrorCode::kFormat, "unsupported dataset format version " + std::to_string(h.version));
  h.sideband_count = r.get<std::uint16_t>("Q");
  const auto mode = r.get<std::uint8_t>("mode flag");
  if (mode > 1) fail(ErrorCode::kFormat, "invalid mode flag " + std::to_string(mode));
  h.mode = static_cast<Mode>(mode);
  const auto noisy = r.get<std::uint8_t>("noise flag");
  if (noisy > 1) fail(ErrorCode::kFormat, "invalid noise flag " + std::to_string(noisy));
  h.noisy = noisy == 1;
  h.noise_trials = r.get<std::uint32_t>("noise N");
  if (h.noisy != (h.noise_trials != 0))
    fail(ErrorCode::kFormat, "noise flag and noise N disagree");
  h.count = r.get<std::uint64_t>("count");
  h.seed = r.get<std::uint64_t>("seed");
  h.box.nbar_min = r.get<double>("box nbar_min");
  h.box.nbar_max = r.get<double>("box nbar_max");
  h.box.eta_min = r.get<double>("box eta_min");
  h.box.eta_max = r.get<double>("box eta_max");
  h.box.omega_t_min = r.get<double>("box omega_t_min");
  h.box.omega_t_max = r.get<double>("box omega_t_max");
  h.box.sideband_count = h.sideband_count;
  try {
    h.box.validate();
  } catch (const Error& e) {
    fail(ErrorCode::kFormat, std::string("header: ") + e.what());
  }
  return h;
}

}  // namespace

void write_binary(const Dataset& data, const std::filesystem::path& path) {
  detail::ByteWriter w;
  Header h = data.header();
  h.count = data.size();
  encode_header(w, h);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto s = data[i];
    w.put_doubles(s.input);
    w.put(s.nbar);
    w.put(s.omega_t);
  }
  detail::write_file_atomic(path, w.buffer());
}

Header read_header(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot open '" + path.string() + "' for reading");
  std::string raw(kHeaderBytes, '\0');
  in.read(raw.data(), static_cast<std::streamsize>(raw.size()));
  raw.resize(static_cast<std::size_t>(in.gcount()));
  detail::ByteReader r(raw);
  return decode_header(r);
}

Dataset read_binary(const std::filesystem::path& path) {
  const std::string raw = detail::read_file(path);
  detail::ByteReader r(raw);
  const Header h = decode_header(r);
  const std::size_t record_bytes = (static_cast<std::size_t>(h.sideband_count) + 3) * 8;
  if (h.count > r.remaining() / record_bytes)
    fail(ErrorCode::kFormat, "file truncated: header declares " + std::to_string(h.count) +
                                 " records, only " +
                                 std::to_string(r.remaining() / record_bytes) + " present");
  if (r.remaining() != h.count * record_bytes)
    fail(ErrorCode::kFormat, "trailing bytes after last record");
  Dataset data(h);
  for (std::size_t i = 0; i < h.count; ++i) {
    r.get_doubles(data.input_row(i), "record inputs");
    const double nbar = r.get<double>("record nbar");
    const double omega_t = r.get<double>("record omega_t");
    data.set_targets(i, nbar, omega_t);
  }
  return data;
}

void write_csv(const Dataset& data, const std::filesystem::path& path) {
  std::string out = "eta";
  for (int q = 1; q <= data.sideband_count(); ++q) out += ",p" + std::to_string(q);
  out += ",nbar,omega_t\n";
  char buf[32];
  auto append = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    out += buf;
  };
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto s = data[i];
    for (std::size_t k = 0; k < s.input.size(); ++k) {
      if (k) out += ',';
      append(s.input[k]);
    }
    out += ',';
    append(s.nbar);
    out += ',';
    append(s.omega_t);
    out += '\n';
  }
  detail::write_file_atomic(path, out);
}

}  // namespace sbthermo::dataset
