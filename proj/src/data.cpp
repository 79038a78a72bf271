#include "mdcell/data.hpp"

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>

#include "mdcell/error.hpp"

namespace mdcell {
namespace {

using Bitmap = std::vector<std::vector<bool>>;

Bitmap glyph_bitmap(int label, int g) {
  Bitmap b(static_cast<std::size_t>(g), std::vector<bool>(static_cast<std::size_t>(g), false));
  const int t = std::max(1, g / 5);
  const int lo = (g - t) / 2;
  auto set = [&](int r, int c) {
    if (r >= 0 && r < g && c >= 0 && c < g) b[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)] = true;
  };
  auto hbar = [&](int row) {
    for (int r = row; r < row + t; ++r)
      for (int c = 0; c < g; ++c) set(r, c);
  };
  auto vbar = [&](int col) {
    for (int r = 0; r < g; ++r)
      for (int c = col; c < col + t; ++c) set(r, c);
  };
  auto diag = [&](bool anti) {
    for (int r = 0; r < g; ++r)
      for (int k = 0; k < t; ++k) set(r, anti ? g - 1 - r + k - t / 2 : r + k - t / 2);
  };
  switch (label) {
    case 0: hbar(lo); break;
    case 1: vbar(lo); break;
    case 2: diag(false); break;
    case 3: diag(true); break;
    case 4: hbar(lo), vbar(lo); break;
    case 5: diag(false), diag(true); break;
    case 6: hbar(0), hbar(g - t), vbar(0), vbar(g - t); break;
    case 7: hbar(0), vbar(0); break;
    case 8: hbar(g - t), vbar(g - t); break;
    case 9: vbar(0), vbar(g - t); break;
    case 10: hbar(0), hbar(g - t); break;
    default: throw ContractViolation("no glyph for label " + std::to_string(label));
  }
  return b;
}

Real quantize(double v) { return static_cast<Real>(std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0); }

std::string sample_id(int i) {
  std::ostringstream os;
  os << 's' << std::setw(5) << std::setfill('0') << i;
  return os.str();
}

}  // namespace

int max_alphabet() { return 11; }

int jitter_positions(const SyntheticParams& p) { return (p.jitter + 1) * (2 * p.jitter + 1); }

std::vector<Sample> gen_synthetic(const SyntheticParams& p) {
  require(p.alphabet >= 2 && p.alphabet <= max_alphabet(),
          "gen_synthetic: alphabet must be in [2, " + std::to_string(max_alphabet()) + "]");
  require(p.count >= 0, "gen_synthetic: count must be >= 0");
  require(p.glyph >= 3, "gen_synthetic: glyph size must be >= 3");
  require(p.jitter >= 0 && p.gap >= 0, "gen_synthetic: jitter and gap must be >= 0");
  require(p.min_length >= 1 && p.max_length >= p.min_length, "gen_synthetic: bad length range");
  require(p.noise >= 0.0 && p.noise <= 1.0, "gen_synthetic: noise must be in [0,1]");
  require((p.height - p.glyph) / 2 >= p.jitter, "gen_synthetic: image too short for glyph plus jitter");
  const int span = p.max_length * p.glyph + (p.max_length - 1) * (p.gap + p.jitter) + p.jitter;
  require(span <= p.width, "gen_synthetic: image too narrow for " + std::to_string(p.max_length) + " glyphs");

  std::vector<Bitmap> glyphs;
  for (int a = 0; a < p.alphabet; ++a) glyphs.push_back(glyph_bitmap(a, p.glyph));

  std::mt19937_64 rng(p.seed);
  auto uniform_int = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  std::uniform_real_distribution<double> noise(-p.noise, p.noise);

  std::vector<Sample> out;
  out.reserve(static_cast<std::size_t>(p.count));
  for (int i = 0; i < p.count; ++i) {
    Sample s;
    s.id = sample_id(i);
    const int length = uniform_int(p.min_length, p.max_length);
    for (int k = 0; k < length; ++k) s.target.push_back(uniform_int(0, p.alphabet - 1));
    std::vector<double> px(static_cast<std::size_t>(p.height * p.width), 0.0);
    int x = uniform_int(0, p.jitter);
    for (int k = 0; k < length; ++k) {
      if (k > 0) x += p.glyph + p.gap + uniform_int(0, p.jitter);
      const int y = (p.height - p.glyph) / 2 + uniform_int(-p.jitter, p.jitter);
      const Bitmap& g = glyphs[static_cast<std::size_t>(s.target[static_cast<std::size_t>(k)])];
      for (int r = 0; r < p.glyph; ++r)
        for (int c = 0; c < p.glyph; ++c)
          if (g[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)])
            px[static_cast<std::size_t>((y + r) * p.width + x + c)] = 1.0;
    }
    s.image = Grid(LatticeShape{p.height, p.width}, 1);
    for (std::size_t k = 0; k < px.size(); ++k) {
      const double v = p.noise > 0.0 ? px[k] + noise(rng) : px[k];
      s.image.data[k] = quantize(v);
    }
    out.push_back(std::move(s));
  }
  return out;
}

void write_pgm(const std::string& path, const Grid& image) {
  require(image.shape.dims() == 2 && image.channels == 1, "write_pgm: need a single-channel 2D grid");
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), "write_pgm: cannot open " + path);
  out << "P5\n" << image.shape.extent(1) << ' ' << image.shape.extent(0) << "\n255\n";
  for (Real v : image.data) {
    const double q = std::round(std::clamp(static_cast<double>(v), 0.0, 1.0) * 255.0);
    out.put(static_cast<char>(static_cast<unsigned char>(q)));
  }
  require(static_cast<bool>(out), "write_pgm: write failed for " + path);
}

Grid read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), path + ": cannot open image");
  auto token = [&]() {
    std::string t;
    int c;
    while ((c = in.get()) != EOF) {
      if (c == '#') {
        while ((c = in.get()) != EOF && c != '\n') {
        }
        continue;
      }
      if (std::isspace(c)) {
        if (!t.empty()) break;
        continue;
      }
      t.push_back(static_cast<char>(c));
    }
    return t;
  };
  auto number = [&](const char* what) {
    const std::string t = token();
    int v = 0;
    const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    require(ec == std::errc() && ptr == t.data() + t.size() && v > 0, path + ": bad " + what + " '" + t + "'");
    return v;
  };
  require(token() == "P5", path + ": not a binary graymap (P5)");
  const int w = number("width");
  const int h = number("height");
  const int maxval = number("maxval");
  require(maxval <= 65535, path + ": maxval out of range");
  Grid g(LatticeShape{h, w}, 1);
  const int bytes = maxval > 255 ? 2 : 1;
  for (Real& v : g.data) {
    int raw = 0;
    for (int b = 0; b < bytes; ++b) {
      const int c = in.get();
      require(c != EOF, path + ": truncated pixel data");
      raw = (raw << 8) | c;
    }
    require(raw <= maxval, path + ": pixel exceeds maxval");
    v = static_cast<Real>(static_cast<double>(raw) / maxval);
  }
  return g;
}

void write_corpus(const std::string& directory, const std::vector<Sample>& samples) {
  namespace fs = std::filesystem;
  fs::create_directories(directory);
  std::ofstream index(fs::path(directory) / "index.tsv", std::ios::binary);
  require(static_cast<bool>(index), "write_corpus: cannot create index.tsv in " + directory);
  for (const Sample& s : samples) {
    write_pgm((fs::path(directory) / (s.id + ".pgm")).string(), s.image);
    index << s.id << '\t';
    for (std::size_t k = 0; k < s.target.size(); ++k) index << (k ? "," : "") << s.target[k];
    index << '\n';
  }
}

std::vector<Sample> load_corpus(const std::string& directory, std::optional<int> alphabet) {
  namespace fs = std::filesystem;
  const fs::path index_path = fs::path(directory) / "index.tsv";
  std::ifstream index(index_path);
  require(static_cast<bool>(index), index_path.string() + ": cannot open corpus index");
  std::vector<Sample> out;
  std::string line;
  int line_no = 0;
  while (std::getline(index, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::string where = index_path.string() + ":" + std::to_string(line_no) + ": ";
    const auto tab = line.find('\t');
    require(tab != std::string::npos && tab > 0, where + "expected 'id<TAB>labels'");
    Sample s;
    s.id = line.substr(0, tab);
    std::string_view rest(line);
    rest.remove_prefix(tab + 1);
    while (!rest.empty()) {
      const auto comma = rest.find(',');
      const std::string_view item = rest.substr(0, comma);
      int v = 0;
      const auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
      require(ec == std::errc() && ptr == item.data() + item.size() && v >= 0,
              where + "bad label '" + std::string(item) + "'");
      require(!alphabet || v < *alphabet, where + "label " + std::to_string(v) + " outside alphabet");
      s.target.push_back(v);
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    const fs::path image = fs::path(directory) / (s.id + ".pgm");
    require(fs::exists(image), where + "missing image " + image.string());
    s.image = read_pgm(image.string());
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace mdcell
