#include "forgebox/archive.hpp"

#include <zlib.h>

#include <algorithm>
#include <array>
#include <cstring>

#include "forgebox/errors.hpp"

namespace forgebox::archive {

namespace {

constexpr std::size_t kNameLen = 100;
constexpr std::size_t kPrefixLen = 155;

using Block = std::array<char, kBlockSize>;

void put_octal(Block& block, std::size_t offset, std::size_t width,
               std::uint64_t value) {
  // width includes the trailing NUL.
  std::string digits(width - 1, '0');
  for (std::size_t i = width - 1; i-- > 0;) {
    digits[i] = static_cast<char>('0' + (value & 7));
    value >>= 3;
  }
  if (value != 0) throw Error("tar: numeric field overflow");
  std::memcpy(block.data() + offset, digits.data(), digits.size());
  block[offset + width - 1] = '\0';
}

void put_string(Block& block, std::size_t offset, std::size_t width,
                std::string_view value) {
  std::memcpy(block.data() + offset, value.data(),
              std::min(width, value.size()));
}

// Splits `name` into ustar (prefix, name) fields.
std::pair<std::string, std::string> split_name(const std::string& name) {
  if (name.size() <= kNameLen) return {"", name};
  // The prefix must end at a '/', which is dropped.
  for (std::size_t pos = name.find('/'); pos != std::string::npos;
       pos = name.find('/', pos + 1)) {
    if (pos > kPrefixLen) break;
    if (name.size() - pos - 1 <= kNameLen && pos + 1 < name.size()) {
      return {name.substr(0, pos), name.substr(pos + 1)};
    }
  }
  throw Error("tar: path too long for ustar: " + name);
}

std::uint32_t checksum(const Block& block) {
  std::uint32_t sum = 0;
  for (std::size_t i = 0; i < kBlockSize; ++i) {
    bool in_field = i >= 148 && i < 156;
    sum += in_field ? ' ' : static_cast<unsigned char>(block[i]);
  }
  return sum;
}

std::uint64_t parse_octal(const char* field, std::size_t width) {
  std::uint64_t value = 0;
  std::size_t i = 0;
  while (i < width && field[i] == ' ') ++i;
  bool any = false;
  for (; i < width && field[i] >= '0' && field[i] <= '7'; ++i) {
    value = (value << 3) | static_cast<std::uint64_t>(field[i] - '0');
    any = true;
  }
  for (; i < width; ++i) {
    if (field[i] != '\0' && field[i] != ' ') {
      throw IntegrityError("tar: malformed numeric field");
    }
  }
  if (!any) return 0;
  return value;
}

std::string field_string(const char* field, std::size_t width) {
  return std::string(field, strnlen(field, width));
}

}  // namespace

bool is_valid_entry_path(std::string_view path) {
  if (path.empty() || path.front() == '/' || path.back() == '/') return false;
  if (path.find('\0') != std::string_view::npos) return false;
  std::size_t start = 0;
  while (start <= path.size()) {
    std::size_t end = path.find('/', start);
    if (end == std::string_view::npos) end = path.size();
    std::string_view part = path.substr(start, end - start);
    if (part.empty() || part == "." || part == "..") return false;
    start = end + 1;
  }
  return true;
}

std::string write_tar(std::vector<Entry> entries, std::int64_t mtime) {
  if (mtime < 0) throw Error("tar: negative mtime");
  std::sort(entries.begin(), entries.end(),
            [](const Entry& a, const Entry& b) { return a.path < b.path; });
  std::string out;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const Entry& e = entries[i];
    if (!is_valid_entry_path(e.path)) {
      throw Error("tar: invalid entry path '" + e.path + "'");
    }
    if (i > 0 && entries[i - 1].path == e.path) {
      throw Error("tar: duplicate entry '" + e.path + "'");
    }
    Block header{};
    std::string name = e.path;
    char type = '0';
    std::uint64_t size = 0;
    switch (e.kind) {
      case EntryKind::file:
        size = e.content.size();
        break;
      case EntryKind::directory:
        type = '5';
        name += '/';
        break;
      case EntryKind::symlink:
        type = '2';
        if (e.link_target.empty() || e.link_target.size() > kNameLen) {
          throw Error("tar: unsupported symlink target for '" + e.path + "'");
        }
        break;
    }
    auto [prefix, base] = split_name(name);
    put_string(header, 0, kNameLen, base);
    put_octal(header, 100, 8, e.mode & 07777);
    put_octal(header, 108, 8, 0);
    put_octal(header, 116, 8, 0);
    put_octal(header, 124, 12, size);
    put_octal(header, 136, 12, static_cast<std::uint64_t>(mtime));
    header[156] = type;
    if (e.kind == EntryKind::symlink) {
      put_string(header, 157, kNameLen, e.link_target);
    }
    put_string(header, 257, 6, std::string_view("ustar\0", 6));
    put_string(header, 263, 2, "00");
    put_octal(header, 329, 8, 0);
    put_octal(header, 337, 8, 0);
    put_string(header, 345, kPrefixLen, prefix);
    std::uint32_t sum = checksum(header);
    put_octal(header, 148, 7, sum);
    header[155] = ' ';
    out.append(header.data(), header.size());
    if (e.kind == EntryKind::file) {
      out += e.content;
      out.append((kBlockSize - size % kBlockSize) % kBlockSize, '\0');
    }
  }
  out.append(2 * kBlockSize, '\0');
  out.append((kRecordSize - out.size() % kRecordSize) % kRecordSize, '\0');
  return out;
}

std::vector<Entry> read_tar(std::string_view bytes) {
  std::vector<Entry> entries;
  std::size_t pos = 0;
  bool terminated = false;
  while (pos + kBlockSize <= bytes.size()) {
    Block header;
    std::memcpy(header.data(), bytes.data() + pos, kBlockSize);
    pos += kBlockSize;
    if (std::all_of(header.begin(), header.end(),
                    [](char c) { return c == '\0'; })) {
      terminated = true;
      break;
    }
    std::uint64_t stored = parse_octal(header.data() + 148, 8);
    if (stored != checksum(header)) {
      throw IntegrityError("tar: header checksum mismatch at offset " +
                           std::to_string(pos - kBlockSize));
    }
    if (std::memcmp(header.data() + 257, "ustar", 5) != 0) {
      throw IntegrityError("tar: not a ustar header");
    }
    Entry e;
    std::string name = field_string(header.data(), kNameLen);
    std::string prefix = field_string(header.data() + 345, kPrefixLen);
    if (!prefix.empty()) name = prefix + "/" + name;
    e.mode = static_cast<std::uint32_t>(parse_octal(header.data() + 100, 8)) &
             07777;
    std::uint64_t size = parse_octal(header.data() + 124, 12);
    char type = header[156];
    switch (type) {
      case '0':
      case '\0':
        e.kind = EntryKind::file;
        break;
      case '5':
        e.kind = EntryKind::directory;
        if (!name.empty() && name.back() == '/') name.pop_back();
        size = 0;
        break;
      case '2':
        e.kind = EntryKind::symlink;
        e.link_target = field_string(header.data() + 157, kNameLen);
        size = 0;
        break;
      default:
        throw IntegrityError(std::string("tar: unsupported entry type '") +
                             type + "' for " + name);
    }
    if (name.rfind("./", 0) == 0) name.erase(0, 2);
    if (!is_valid_entry_path(name)) {
      throw IntegrityError("tar: unsafe entry path '" + name + "'");
    }
    e.path = std::move(name);
    if (size > bytes.size() - pos) throw IntegrityError("tar: truncated entry");
    e.content.assign(bytes.substr(pos, size));
    std::size_t padded = (size + kBlockSize - 1) / kBlockSize * kBlockSize;
    if (padded > bytes.size() - pos) throw IntegrityError("tar: truncated entry");
    pos += padded;
    entries.push_back(std::move(e));
  }
  if (!terminated) throw IntegrityError("tar: missing end-of-archive marker");
  return entries;
}

bool is_gzip(std::string_view bytes) {
  return bytes.size() >= 2 && static_cast<unsigned char>(bytes[0]) == 0x1f &&
         static_cast<unsigned char>(bytes[1]) == 0x8b;
}

std::string gzip(std::string_view bytes) {
  z_stream zs{};
  if (deflateInit2(&zs, 9, Z_DEFLATED, 15 + 16, 9, Z_DEFAULT_STRATEGY) !=
      Z_OK) {
    throw Error("gzip: deflateInit2 failed");
  }
  gz_header header{};
  header.time = 0;
  header.os = 255;
  deflateSetHeader(&zs, &header);
  std::string out(deflateBound(&zs, bytes.size()) + 32, '\0');
  zs.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(bytes.data()));
  zs.avail_in = static_cast<uInt>(bytes.size());
  zs.next_out = reinterpret_cast<Bytef*>(out.data());
  zs.avail_out = static_cast<uInt>(out.size());
  int rc = deflate(&zs, Z_FINISH);
  deflateEnd(&zs);
  if (rc != Z_STREAM_END) throw Error("gzip: deflate failed");
  out.resize(zs.total_out);
  return out;
}

std::string gunzip(std::string_view bytes) {
  z_stream zs{};
  if (inflateInit2(&zs, 15 + 16) != Z_OK) {
    throw Error("gzip: inflateInit2 failed");
  }
  zs.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(bytes.data()));
  zs.avail_in = static_cast<uInt>(bytes.size());
  std::string out;
  std::array<char, 65536> chunk;
  int rc = Z_OK;
  while (rc != Z_STREAM_END) {
    zs.next_out = reinterpret_cast<Bytef*>(chunk.data());
    zs.avail_out = static_cast<uInt>(chunk.size());
    rc = inflate(&zs, Z_NO_FLUSH);
    if (rc != Z_OK && rc != Z_STREAM_END) {
      inflateEnd(&zs);
      throw IntegrityError("gzip: corrupt stream");
    }
    out.append(chunk.data(), chunk.size() - zs.avail_out);
    if (rc == Z_OK && zs.avail_in == 0 && zs.avail_out != 0) {
      inflateEnd(&zs);
      throw IntegrityError("gzip: truncated stream");
    }
  }
  inflateEnd(&zs);
  return out;
}

}  // namespace forgebox::archive
