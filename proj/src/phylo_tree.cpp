#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <map>
#include <optional>

#include "mfbd/phylo.hpp"

namespace mfbd {

TreeParseError::TreeParseError(std::size_t position, const std::string& message)
    : std::runtime_error("tree error at position " + std::to_string(position) + ": " + message), position_(position) {}

namespace {

struct Annotation {
  std::string value;
  std::size_t position = 0;
};

struct RawNode {
  std::size_t position = 0;
  std::vector<RawNode> children;
  std::string label;
  std::map<std::string, Annotation> attrs;
  std::optional<double> length;
  std::size_t length_position = 0;
};

class Parser {
 public:
  explicit Parser(std::string_view text) : text_(text) {}

  RawNode parse() {
    skip_space();
    RawNode top = node(0);
    skip_space();
    expect(';');
    skip_space();
    if (pos_ != text_.size()) fail(pos_, "unexpected text after ';'");
    return top;
  }

 private:
  static constexpr int kMaxDepth = 100000;

  [[noreturn]] void fail(std::size_t at, const std::string& message) const { throw TreeParseError(at, message); }

  bool at_end() const { return pos_ >= text_.size(); }
  char peek() const { return at_end() ? '\0' : text_[pos_]; }

  void skip_space() {
    while (!at_end() && (text_[pos_] == ' ' || text_[pos_] == '\t' || text_[pos_] == '\n' || text_[pos_] == '\r')) {
      ++pos_;
    }
  }

  void expect(char c) {
    if (peek() != c) {
      if (at_end()) fail(pos_, std::string("expected '") + c + "' but the input ended");
      fail(pos_, std::string("expected '") + c + "', found '" + peek() + "'");
    }
    ++pos_;
  }

  RawNode node(int depth) {
    if (depth > kMaxDepth) fail(pos_, "tree nesting is too deep");
    RawNode n;
    n.position = pos_;
    if (peek() == '(') {
      ++pos_;
      while (true) {
        skip_space();
        n.children.push_back(node(depth + 1));
        skip_space();
        if (peek() == ',') {
          ++pos_;
          continue;
        }
        expect(')');
        break;
      }
      skip_space();
    }
    n.label = label();
    skip_space();
    if (peek() == '[') annotation(n);
    skip_space();
    if (peek() == ':') {
      ++pos_;
      skip_space();
      n.length_position = pos_;
      n.length = number();
    }
    return n;
  }

  std::string label() {
    std::string out;
    if (peek() == '\'') {
      const std::size_t start = pos_++;
      while (true) {
        if (at_end()) fail(start, "unterminated quoted label");
        const char c = text_[pos_++];
        if (c == '\'') {
          if (peek() == '\'') {
            out.push_back('\'');
            ++pos_;
            continue;
          }
          break;
        }
        out.push_back(c);
      }
      return out;
    }
    while (!at_end()) {
      const char c = text_[pos_];
      if (c == '(' || c == ')' || c == '[' || c == ']' || c == ':' || c == ';' || c == ',' || c == '\'' || c == ' ' ||
          c == '\t' || c == '\n' || c == '\r') {
        break;
      }
      out.push_back(c);
      ++pos_;
    }
    return out;
  }

  void annotation(RawNode& n) {
    const std::size_t start = pos_;
    expect('[');
    if (peek() != '&') fail(pos_, "node comments must start with '[&'");
    ++pos_;
    while (true) {
      skip_space();
      const std::size_t key_pos = pos_;
      std::string key = token("=,]");
      if (key.empty()) fail(key_pos, "expected a key");
      skip_space();
      expect('=');
      skip_space();
      const std::size_t value_pos = pos_;
      std::string value = token(",]");
      if (value.empty()) fail(value_pos, "empty value for key '" + key + "'");
      if (key != "type" && key != "event" && key != "to") fail(key_pos, "unknown key '" + key + "'");
      if (!n.attrs.emplace(key, Annotation{value, value_pos}).second) fail(key_pos, "duplicate key '" + key + "'");
      skip_space();
      if (peek() == ',') {
        ++pos_;
        continue;
      }
      if (at_end()) fail(start, "unterminated node comment");
      expect(']');
      break;
    }
  }

  std::string token(std::string_view stops) {
    std::string out;
    while (!at_end() && stops.find(text_[pos_]) == std::string_view::npos) out.push_back(text_[pos_++]);
    while (!out.empty() && (out.back() == ' ' || out.back() == '\t' || out.back() == '\n' || out.back() == '\r')) {
      out.pop_back();
    }
    return out;
  }

  double number() {
    const std::size_t start = pos_;
    while (!at_end() && std::string_view("0123456789+-.eE").find(text_[pos_]) != std::string_view::npos) ++pos_;
    double value = 0.0;
    const auto [end, ec] = std::from_chars(text_.data() + start, text_.data() + pos_, value);
    if (start == pos_ || ec != std::errc() || end != text_.data() + pos_) fail(start, "malformed branch length");
    if (!std::isfinite(value)) fail(start, "branch length must be finite");
    return value;
  }

  std::string_view text_;
  std::size_t pos_ = 0;
};

int parse_type(const Annotation& a, const std::string& what) {
  int value = 0;
  const auto [end, ec] = std::from_chars(a.value.data(), a.value.data() + a.value.size(), value);
  if (ec != std::errc() || end != a.value.data() + a.value.size() || value < 1) {
    throw TreeParseError(a.position, what + " must be a positive integer, got '" + a.value + "'");
  }
  return value - 1;
}

int node_type(const RawNode& n) {
  const auto it = n.attrs.find("type");
  if (it == n.attrs.end()) throw TreeParseError(n.position, "node has no type annotation");
  return parse_type(it->second, "type");
}

struct Builder {
  PhyloTree tree;
  std::vector<double> depth;  // origin-to-node distance per branch
  std::vector<std::size_t> position;

  int add(const RawNode& n, int parent, double parent_depth) {
    const int type = node_type(n);
    if (!n.length) throw TreeParseError(n.position, "branch length missing");
    if (!(*n.length > 0.0)) throw TreeParseError(n.length_position, "branch lengths must be positive");

    const auto event = n.attrs.find("event");
    const auto to = n.attrs.find("to");
    Branch b;
    b.type = type;
    b.length = *n.length;
    b.label = n.label;
    b.parent = parent;
    switch (n.children.size()) {
      case 0:
        if (event == n.attrs.end()) throw TreeParseError(n.position, "leaf needs event=sample or event=fossil");
        if (event->second.value == "sample") {
          b.end = BranchEnd::sample;
        } else if (event->second.value == "fossil") {
          b.end = BranchEnd::fossil;
        } else {
          throw TreeParseError(event->second.position, "leaf event must be sample or fossil, got '" + event->second.value + "'");
        }
        break;
      case 1:
        if (event == n.attrs.end() || event->second.value != "typechange") {
          throw TreeParseError(n.position, "single-child node needs event=typechange");
        }
        if (to == n.attrs.end()) throw TreeParseError(n.position, "type change needs a 'to' annotation");
        b.end = BranchEnd::type_change;
        break;
      case 2:
        if (event != n.attrs.end()) {
          throw TreeParseError(event->second.position, "binary node takes no event annotation");
        }
        b.end = BranchEnd::split;
        break;
      default:
        throw TreeParseError(n.position, "multifurcation with " + std::to_string(n.children.size()) +
                                             " children; only binary splits are supported");
    }
    if (to != n.attrs.end() && b.end != BranchEnd::type_change) {
      throw TreeParseError(to->second.position, "'to' is only valid on a type change");
    }

    const int id = static_cast<int>(tree.branches.size());
    tree.branches.push_back(b);
    depth.push_back(parent_depth + *n.length);
    position.push_back(n.position);
    if (b.end == BranchEnd::type_change) {
      const int target = parse_type(to->second, "'to'");
      if (target == type) throw TreeParseError(to->second.position, "type change to the same type");
      if (node_type(n.children[0]) != target) {
        throw TreeParseError(n.children[0].position, "type below a type change must equal its 'to' value");
      }
      const int child = add(n.children[0], id, depth[id]);
      tree.branches[id].left = child;
    } else if (b.end == BranchEnd::split) {
      for (const RawNode& c : n.children) {
        if (node_type(c) != type) {
          throw TreeParseError(c.position, "split children must keep the parent's type; use an explicit type change");
        }
      }
      const int left = add(n.children[0], id, depth[id]);
      const int right = add(n.children[1], id, depth[id]);
      tree.branches[id].left = left;
      tree.branches[id].right = right;
    }
    return id;
  }
};

std::string format_length(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

std::string quote_label(const std::string& label) {
  if (label.find_first_of("()[]:;,' \t\n\r") == std::string::npos) return label;
  std::string out = "'";
  for (char c : label) {
    if (c == '\'') out.push_back('\'');
    out.push_back(c);
  }
  out.push_back('\'');
  return out;
}

void write_branch(const PhyloTree& tree, int id, std::string& out) {
  const Branch& b = tree.branches[static_cast<std::size_t>(id)];
  if (b.end == BranchEnd::split) {
    out += "(";
    write_branch(tree, b.left, out);
    out += ",";
    write_branch(tree, b.right, out);
    out += ")";
  } else if (b.end == BranchEnd::type_change) {
    out += "(";
    write_branch(tree, b.left, out);
    out += ")";
  }
  out += quote_label(b.label);
  out += "[&type=" + std::to_string(b.type + 1);
  switch (b.end) {
    case BranchEnd::sample:
      out += ",event=sample";
      break;
    case BranchEnd::fossil:
      out += ",event=fossil";
      break;
    case BranchEnd::type_change:
      out += ",event=typechange,to=" + std::to_string(tree.branches[static_cast<std::size_t>(b.left)].type + 1);
      break;
    case BranchEnd::split:
      break;
  }
  out += "]:" + format_length(b.length);
}

}  // namespace

PhyloTree parse_tree(std::string_view text) {
  RawNode top = Parser(text).parse();

  Builder builder;
  const RawNode* root = &top;
  if (!top.length) {
    const bool origin = top.children.size() == 1 && top.attrs.find("event") == top.attrs.end();
    if (!origin) {
      throw TreeParseError(top.position,
                           "the outermost node needs a branch length or must be a single-child origin node");
    }
    if (!top.label.empty()) throw TreeParseError(top.position, "the origin node takes no label");
    if (top.attrs.find("to") != top.attrs.end()) throw TreeParseError(top.position, "the origin node takes no 'to'");
    root = &top.children[0];
    if (node_type(top) != node_type(*root)) {
      throw TreeParseError(root->position, "the stem type must match the origin node's type");
    }
    builder.tree.explicit_origin = true;
  }
  builder.add(*root, -1, 0.0);

  PhyloTree& tree = builder.tree;
  double present = -1.0;
  for (std::size_t k = 0; k < tree.branches.size(); ++k) {
    if (tree.branches[k].end == BranchEnd::sample) present = std::max(present, builder.depth[k]);
  }
  if (present < 0.0) throw TreeParseError(root->position, "tree has no sampled tip, so the present is undefined");
  const double slack = 1e-9 * std::max(1.0, present);
  for (std::size_t k = 0; k < tree.branches.size(); ++k) {
    const Branch& b = tree.branches[k];
    const double dk = builder.depth[k];
    if (b.end == BranchEnd::sample && present - dk > slack) {
      throw TreeParseError(builder.position[k], "sampled tip is not at the present (sampled tips must be equidistant "
                                                "from the origin)");
    }
    if (b.end != BranchEnd::sample && dk >= present - slack) {
      throw TreeParseError(builder.position[k], "only sampled tips may reach the present");
    }
  }

  tree.tau = present;
  tree.root = 0;
  for (std::size_t k = 0; k < tree.branches.size(); ++k) {
    Branch& b = tree.branches[k];
    b.t2 = b.parent < 0 ? present : present - builder.depth[static_cast<std::size_t>(b.parent)];
    b.t1 = b.end == BranchEnd::sample ? 0.0 : present - builder.depth[k];
  }
  return tree;
}

std::string serialize_tree(const PhyloTree& tree) {
  if (tree.branches.empty()) throw std::invalid_argument("serialize_tree: empty tree");
  std::string out;
  if (tree.explicit_origin) out += "(";
  write_branch(tree, tree.root, out);
  if (tree.explicit_origin) {
    out += ")[&type=" + std::to_string(tree.branches[static_cast<std::size_t>(tree.root)].type + 1) + "]";
  }
  out += ";";
  return out;
}

}  // namespace mfbd
