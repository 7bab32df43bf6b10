#include "mcnip/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "mcnip/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint blobs are little-endian");

namespace mcnip {

void write_checkpoint(const std::filesystem::path& path,
                      std::string_view magic, nlohmann::json header,
                      const std::vector<double>& blob) {
  header["param_count"] = blob.size();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw missing_input_error("cannot open " + path.string() + " for writing");
  out << magic << '\n' << header.dump() << '\n';
  out.write(reinterpret_cast<const char*>(blob.data()),
            static_cast<std::streamsize>(blob.size() * sizeof(double)));
  if (!out) throw missing_input_error("short write to " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path,
                           std::string_view expected_magic) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw missing_input_error("cannot open checkpoint " + path.string());
  Checkpoint ck;
  if (!std::getline(in, ck.magic))
    throw parse_error(path.string(), 1, "missing magic line");
  if (!expected_magic.empty() && ck.magic != expected_magic)
    throw parse_error(path.string(), 1,
                      "unexpected magic '" + ck.magic + "', wanted '" +
                          std::string(expected_magic) + "'");
  std::string header_line;
  if (!std::getline(in, header_line))
    throw parse_error(path.string(), 2, "missing JSON header");
  ck.header = nlohmann::json::parse(header_line, nullptr, false);
  if (ck.header.is_discarded())
    throw parse_error(path.string(), 2, "malformed JSON header");
  const auto count = ck.header.value("param_count", std::size_t{0});
  ck.blob.resize(count);
  in.read(reinterpret_cast<char*>(ck.blob.data()),
          static_cast<std::streamsize>(count * sizeof(double)));
  if (static_cast<std::size_t>(in.gcount()) != count * sizeof(double))
    throw integrity_error(path.string() + ": parameter blob truncated");
  return ck;
}

std::string file_checksum(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw missing_input_error("cannot open " + path.string());
  char buf[1 << 16];
  std::uint64_t h = 14695981039346656037ull;
  while (in) {
    in.read(buf, sizeof buf);
    h = fnv1a64(std::string_view(buf, static_cast<std::size_t>(in.gcount())), h);
  }
  return to_hex(h);
}

void append_matrix(std::vector<double>& blob, const Mat& m) {
  for (Index r = 0; r < m.rows(); ++r)
    for (Index c = 0; c < m.cols(); ++c) blob.push_back(m(r, c));
}

void append_vector(std::vector<double>& blob, const Vec& v) {
  blob.insert(blob.end(), v.data(), v.data() + v.size());
}

Mat take_matrix(const std::vector<double>& blob, std::size_t& pos, Index rows,
                Index cols) {
  const auto need = static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols);
  if (pos + need > blob.size()) throw integrity_error("checkpoint blob too short");
  Mat m(rows, cols);
  for (Index r = 0; r < rows; ++r)
    for (Index c = 0; c < cols; ++c) m(r, c) = blob[pos++];
  return m;
}

Vec take_vector(const std::vector<double>& blob, std::size_t& pos, Index n) {
  if (pos + static_cast<std::size_t>(n) > blob.size())
    throw integrity_error("checkpoint blob too short");
  Vec v(n);
  std::memcpy(v.data(), blob.data() + pos, static_cast<std::size_t>(n) * sizeof(double));
  pos += static_cast<std::size_t>(n);
  return v;
}

}  // namespace mcnip
