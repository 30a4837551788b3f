#pragma once

#include <cctype>
#include <string>
#include <vector>

namespace tsr {

struct ShRedirect {
  std::string op;      // ">", ">>", "<", or a dup like ">&1"
  std::string target;  // empty for dup redirects
  bool tainted = false;
};

// One simple command. begin/end give the byte range the command (with its
// redirections) occupies inside its line, so a rewriter can splice
// replacements without disturbing surrounding structure.
struct ShCommand {
  std::vector<std::string> argv;
  std::vector<ShRedirect> redirects;
  std::size_t line = 0;
  std::size_t begin = 0;
  std::size_t end = 0;
  bool tainted = false;  // uses $-expansion or substitution; opaque to analysis
};

struct ParsedScript {
  bool ok = false;
  std::string failure;
  std::vector<std::string> lines;
  std::vector<ShCommand> commands;
};

namespace sh_detail {

struct Token {
  enum Kind { Word, Op } kind = Word;
  std::string text;
  std::size_t begin = 0;
  std::size_t end = 0;
  bool tainted = false;
};

// Tokenizes one line. Returns false on constructs outside the supported
// subset (unclosed quotes, subshells, substitution in a place we cannot
// mark as taint on a word).
inline bool tokenize_line(const std::string& line, std::vector<Token>& out,
                          std::string& failure) {
  std::size_t i = 0;
  const std::size_t n = line.size();
  while (i < n) {
    char c = line[i];
    if (c == ' ' || c == '\t') {
      ++i;
      continue;
    }
    if (c == '#') break;  // comment to end of line
    if (c == '(' || c == ')') {
      failure = "subshell or function definition";
      return false;
    }
    if (c == '`') {
      failure = "command substitution";
      return false;
    }

    // Operators, longest match first. A leading digit can prefix a redirect.
    std::size_t op_start = i;
    std::size_t d = i;
    while (d < n && std::isdigit(static_cast<unsigned char>(line[d]))) ++d;
    bool digit_redirect = d > i && d < n && (line[d] == '>' || line[d] == '<');
    std::size_t o = digit_redirect ? d : i;
    auto push_op = [&](std::size_t len, std::size_t text_from) {
      Token t;
      t.kind = Token::Op;
      t.text = line.substr(text_from, o + len - text_from);
      t.begin = op_start;
      t.end = o + len;
      out.push_back(t);
      i = o + len;
    };
    if (digit_redirect || !std::isdigit(static_cast<unsigned char>(c))) {
      if (line.compare(o, 2, "&&") == 0 || line.compare(o, 2, "||") == 0) {
        push_op(2, o);
        continue;
      }
      if (line.compare(o, 2, ">>") == 0) {
        push_op(2, op_start);
        continue;
      }
      if (o < n && line[o] == '>') {
        // ">&2"-style dups take no file target.
        if (o + 1 < n && line[o + 1] == '&') {
          std::size_t len = 2;
          while (o + len < n && std::isdigit(static_cast<unsigned char>(line[o + len]))) {
            ++len;
          }
          push_op(len, op_start);
          continue;
        }
        push_op(1, op_start);
        continue;
      }
      if (o < n && line[o] == '<') {
        push_op(1, op_start);
        continue;
      }
      if (c == ';' || c == '|' || c == '&') {
        push_op(1, i);
        continue;
      }
    }

    // Word, honoring quotes.
    Token t;
    t.begin = i;
    bool closed = true;
    while (i < n) {
      char w = line[i];
      if (w == ' ' || w == '\t' || w == ';' || w == '|' || w == '&' || w == '>' ||
          w == '<' || w == '#') {
        break;
      }
      if (w == '(' || w == ')') {
        failure = "subshell or function definition";
        return false;
      }
      if (w == '`') {
        failure = "command substitution";
        return false;
      }
      if (w == '\\') {
        if (i + 1 >= n) {
          failure = "dangling backslash";
          return false;
        }
        t.text += line[i + 1];
        i += 2;
        continue;
      }
      if (w == '\'') {
        std::size_t close = line.find('\'', i + 1);
        if (close == std::string::npos) {
          failure = "unclosed single quote";
          return false;
        }
        t.text += line.substr(i + 1, close - i - 1);
        i = close + 1;
        continue;
      }
      if (w == '"') {
        ++i;
        closed = false;
        while (i < n) {
          char q = line[i];
          if (q == '"') {
            closed = true;
            ++i;
            break;
          }
          if (q == '`') {
            failure = "command substitution";
            return false;
          }
          if (q == '$') t.tainted = true;
          if (q == '\\' && i + 1 < n) {
            t.text += line[i + 1];
            i += 2;
            continue;
          }
          t.text += q;
          ++i;
        }
        if (!closed) {
          failure = "unclosed double quote";
          return false;
        }
        continue;
      }
      if (w == '$') t.tainted = true;
      t.text += w;
      ++i;
    }
    t.end = i;
    out.push_back(t);
  }
  return true;
}

inline bool is_structure_keyword(const std::string& w) {
  return w == "if" || w == "then" || w == "else" || w == "elif" || w == "fi" ||
         w == "!";
}

inline bool is_unsupported_keyword(const std::string& w) {
  return w == "while" || w == "for" || w == "until" || w == "do" || w == "done" ||
         w == "case" || w == "esac" || w == "function" || w == "select" ||
         w == "{" || w == "}";
}

}  // namespace sh_detail

// Parses a POSIX-sh subset: simple commands joined by newlines, ';', '&&',
// '||', '|', '&', with redirections and single-level if/then/else blocks.
// Anything fancier (loops, functions, substitution) makes ok=false; callers
// treat that as an unanalyzable script.
inline ParsedScript parse_script(const std::string& text) {
  ParsedScript out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string::npos) {
      if (pos < text.size()) out.lines.push_back(text.substr(pos));
      break;
    }
    out.lines.push_back(text.substr(pos, eol - pos));
    pos = eol + 1;
  }

  for (std::size_t ln = 0; ln < out.lines.size(); ++ln) {
    std::vector<sh_detail::Token> tokens;
    if (!sh_detail::tokenize_line(out.lines[ln], tokens, out.failure)) {
      return out;  // ok stays false
    }

    ShCommand current;
    bool open = false;
    auto flush = [&] {
      if (!open) return;
      if (!current.argv.empty() || !current.redirects.empty()) {
        out.commands.push_back(current);
      }
      current = ShCommand{};
      open = false;
    };

    for (std::size_t ti = 0; ti < tokens.size(); ++ti) {
      const auto& tok = tokens[ti];
      if (tok.kind == sh_detail::Token::Op) {
        if (tok.text == "&&" || tok.text == "||" || tok.text == ";" ||
            tok.text == "|" || tok.text == "&") {
          flush();
          continue;
        }
        // Redirect operator: normalize away the fd prefix.
        std::string op = tok.text;
        std::size_t skip = 0;
        while (skip < op.size() && std::isdigit(static_cast<unsigned char>(op[skip]))) {
          ++skip;
        }
        op = op.substr(skip);
        if (!open) {
          current.line = ln;
          current.begin = tok.begin;
          open = true;
        }
        ShRedirect redirect;
        redirect.op = op;
        if (op == ">" || op == ">>" || op == "<") {
          if (ti + 1 >= tokens.size() ||
              tokens[ti + 1].kind != sh_detail::Token::Word) {
            out.failure = "redirect without target";
            return out;
          }
          redirect.target = tokens[ti + 1].text;
          redirect.tainted = tokens[ti + 1].tainted;
          current.tainted = current.tainted || redirect.tainted;
          current.end = tokens[ti + 1].end;
          ++ti;
        } else {
          current.end = tok.end;
        }
        current.redirects.push_back(std::move(redirect));
        continue;
      }

      // Word token.
      if (!open && current.argv.empty()) {
        if (sh_detail::is_structure_keyword(tok.text) && !tok.tainted) {
          continue;  // structure only; condition command follows
        }
        if (sh_detail::is_unsupported_keyword(tok.text) && !tok.tainted) {
          out.failure = "unsupported construct: " + tok.text;
          return out;
        }
      }
      if (!open) {
        current.line = ln;
        current.begin = tok.begin;
        open = true;
      }
      current.argv.push_back(tok.text);
      current.tainted = current.tainted || tok.tainted;
      current.end = tok.end;
    }
    flush();
  }
  out.ok = true;
  return out;
}

}  // namespace tsr
