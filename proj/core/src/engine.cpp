#include "olab/engine.hpp"

#include <cctype>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>

namespace olab::engine {

namespace {

constexpr int kRayDr[8] = {-1, -1, -1, 0, 0, 1, 1, 1};
constexpr int kRayDc[8] = {-1, 0, 1, -1, 1, -1, 0, 1};

// Discs flipped by playing `move` for `mover`, 0 if the move is not legal.
uint64_t flips_for(const Board& board, Square move, Player mover) {
  if (board.cells[move.index] != Cell::Empty) return 0;
  const Cell mine = disc_of(mover);
  const Cell theirs = disc_of(opponent(mover));
  uint64_t flips = 0;
  const int r0 = move.row(), c0 = move.col();
  for (int ray = 0; ray < 8; ++ray) {
    uint64_t line = 0;
    int r = r0 + kRayDr[ray], c = c0 + kRayDc[ray];
    while (r >= 0 && r < 8 && c >= 0 && c < 8 && board.cells[r * 8 + c] == theirs) {
      line |= 1ULL << (r * 8 + c);
      r += kRayDr[ray];
      c += kRayDc[ray];
    }
    if (line != 0 && r >= 0 && r < 8 && c >= 0 && c < 8 && board.cells[r * 8 + c] == mine) {
      flips |= line;
    }
  }
  return flips;
}

uint64_t perft_rec(const Board& board, int depth) {
  if (depth == 0) return 1;
  uint64_t mask = legal_move_mask(board);
  uint64_t total = 0;
  while (mask) {
    int idx = std::countr_zero(mask);
    mask &= mask - 1;
    total += perft_rec(apply_move(board, Square(idx)), depth - 1);
  }
  return total;
}

}  // namespace

Square::Square(int idx) {
  if (idx < 0 || idx > 63) throw NotationError("square index out of range: " + std::to_string(idx));
  index = static_cast<uint8_t>(idx);
}

std::string Square::notation() const {
  std::string s(2, '?');
  s[0] = static_cast<char>('A' + col());
  s[1] = static_cast<char>('1' + row());
  return s;
}

Square parse_notation(std::string_view text) {
  if (text.size() != 2) throw NotationError("bad move token '" + std::string(text) + "'");
  const char c = static_cast<char>(std::toupper(static_cast<unsigned char>(text[0])));
  const char r = text[1];
  if (c < 'A' || c > 'H' || r < '1' || r > '8') {
    throw NotationError("bad move token '" + std::string(text) + "'");
  }
  return Square((r - '1') * 8 + (c - 'A'));
}

Board Board::initial() {
  Board b;
  b.cells[parse_notation("D4").index] = Cell::White;
  b.cells[parse_notation("E5").index] = Cell::White;
  b.cells[parse_notation("E4").index] = Cell::Black;
  b.cells[parse_notation("D5").index] = Cell::Black;
  b.side_to_move = Player::Black;
  return b;
}

int Board::disc_count(Player p) const {
  int n = 0;
  for (Cell c : cells) n += (c == disc_of(p));
  return n;
}

int Board::disc_count() const { return disc_count(Player::Black) + disc_count(Player::White); }

uint64_t legal_move_mask(const Board& board) {
  uint64_t mask = 0;
  for (int i = 0; i < 64; ++i) {
    if (flips_for(board, Square(i), board.side_to_move) != 0) mask |= 1ULL << i;
  }
  return mask;
}

std::vector<Square> legal_moves(const Board& board) {
  std::vector<Square> out;
  uint64_t mask = legal_move_mask(board);
  while (mask) {
    out.push_back(Square(std::countr_zero(mask)));
    mask &= mask - 1;
  }
  return out;
}

bool is_legal(const Board& board, Square move) {
  return flips_for(board, move, board.side_to_move) != 0;
}

Board apply_move(const Board& board, Square move) {
  const uint64_t flips = flips_for(board, move, board.side_to_move);
  if (flips == 0) {
    throw IllegalMoveError("illegal move " + move.notation() + " for " +
                           (board.side_to_move == Player::Black ? std::string("Black") : std::string("White")));
  }
  Board out = board;
  out.cells[move.index] = disc_of(board.side_to_move);
  uint64_t m = flips;
  while (m) {
    int idx = std::countr_zero(m);
    m &= m - 1;
    out.cells[idx] = disc_of(board.side_to_move);
  }
  out.side_to_move = opponent(board.side_to_move);
  if (legal_move_mask(out) == 0) {
    Board passed = out;
    passed.side_to_move = opponent(out.side_to_move);
    if (legal_move_mask(passed) != 0) out = passed;  // automatic pass
  }
  return out;
}

Board rotate_board(const Board& board) {
  Board out;
  out.side_to_move = board.side_to_move;
  for (int i = 0; i < 64; ++i) out.cells[63 - i] = board.cells[i];
  return out;
}

std::vector<Board> replay(const GameRecord& record) {
  std::vector<Board> states;
  states.reserve(record.moves.size());
  Board b = Board::initial();
  for (size_t t = 0; t < record.moves.size(); ++t) {
    states.push_back(b);
    try {
      b = apply_move(b, record.moves[t]);
    } catch (const IllegalMoveError& e) {
      throw IllegalMoveError("step " + std::to_string(t + 1) + ": " + e.what());
    }
  }
  return states;
}

Board final_board(const GameRecord& record) {
  Board b = Board::initial();
  for (size_t t = 0; t < record.moves.size(); ++t) {
    try {
      b = apply_move(b, record.moves[t]);
    } catch (const IllegalMoveError& e) {
      throw IllegalMoveError("step " + std::to_string(t + 1) + ": " + e.what());
    }
  }
  return b;
}

GameRecord generate_random_game(uint64_t seed) {
  std::mt19937_64 rng(seed);
  GameRecord record;
  Board b = Board::initial();
  while (true) {
    auto moves = legal_moves(b);
    if (moves.empty()) break;  // apply_move auto-passes, so this is game over
    Square m = parse_notation("F5");
    if (!record.moves.empty()) {
      // Tournament transcripts canonicalize the opening to F5; sampling any
      // of the four symmetric openings would make the corpus exactly closed
      // under 180-degree rotation, erasing the rotation-robustness contrast
      // the evaluation protocol measures.
      std::uniform_int_distribution<size_t> pick(0, moves.size() - 1);
      m = moves[pick(rng)];
    }
    record.moves.push_back(m);
    b = apply_move(b, m);
  }
  return record;
}

uint64_t perft(int depth) {
  if (depth < 0 || depth > 8) throw ContractError("perft depth must be in [0, 8]");
  return perft_rec(Board::initial(), depth);
}

std::string format_record(const GameRecord& record) {
  std::string out;
  for (size_t i = 0; i < record.moves.size(); ++i) {
    if (i) out += ' ';
    out += record.moves[i].notation();
  }
  return out;
}

GameRecord parse_record(std::string_view line) {
  GameRecord record;
  std::istringstream in{std::string(line)};
  std::string tok;
  while (in >> tok) record.moves.push_back(parse_notation(tok));
  if (record.moves.empty()) throw NotationError("empty move list");
  replay(record);  // validates legality
  return record;
}

TranscriptImport import_transcripts(std::istream& in, bool mirror_rows) {
  TranscriptImport result;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    size_t start = line.find_first_not_of(" \t\r");
    if (start == std::string::npos || line[start] == '#') continue;
    try {
      GameRecord record;
      std::istringstream toks(line);
      std::string tok;
      while (toks >> tok) {
        Square sq = parse_notation(tok);
        record.moves.push_back(mirror_rows ? mirror_rows_square(sq) : sq);
      }
      if (record.moves.empty()) continue;
      replay(record);
      result.games.push_back(std::move(record));
    } catch (const Error& e) {
      result.issues.push_back({line_no, e.what()});
    }
  }
  return result;
}

void export_transcripts(std::ostream& out, const std::vector<GameRecord>& games) {
  for (const auto& g : games) out << format_record(g) << '\n';
}

}  // namespace olab::engine
