#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "olab/errors.hpp"

namespace olab::engine {

enum class Cell : uint8_t { Empty = 0, Black = 1, White = 2 };
enum class Player : uint8_t { Black = 0, White = 1 };

inline Player opponent(Player p) { return p == Player::Black ? Player::White : Player::Black; }
inline Cell disc_of(Player p) { return p == Player::Black ? Cell::Black : Cell::White; }

// One of the 64 tiles, row-major with A1 = 0 and H8 = 63.
struct Square {
  uint8_t index = 0;

  Square() = default;
  explicit Square(int idx);

  int row() const { return index / 8; }  // 0-based, row 1 -> 0
  int col() const { return index % 8; }  // 0-based, column A -> 0

  std::string notation() const;

  bool operator==(const Square&) const = default;
  auto operator<=>(const Square&) const = default;
};

// Parses "D3"-style notation (case-insensitive). Throws NotationError.
Square parse_notation(std::string_view text);

// 180-degree board rotation as a tile map: i -> 63 - i.
inline Square rotate_square(Square s) { return Square(63 - s.index); }

// Mirror across the horizontal axis (row r -> 9 - r), the importer fallback
// for transcripts recorded with a flipped orientation.
inline Square mirror_rows_square(Square s) { return Square((7 - s.row()) * 8 + s.col()); }

struct Board {
  std::array<Cell, 64> cells{};
  Player side_to_move = Player::Black;

  static Board initial();

  Cell at(Square s) const { return cells[s.index]; }
  int disc_count(Player p) const;
  int disc_count() const;

  bool operator==(const Board&) const = default;
};

// Bitmask of legal squares for board.side_to_move (bit i = tile i).
uint64_t legal_move_mask(const Board& board);
std::vector<Square> legal_moves(const Board& board);
bool is_legal(const Board& board, Square move);

// Applies a legal move, flips all flanked lines, toggles side to move and
// auto-passes if the new mover has no legal move while the opponent does.
// Throws IllegalMoveError. The input board is left untouched.
Board apply_move(const Board& board, Square move);

Board rotate_board(const Board& board);

struct GameRecord {
  std::vector<Square> moves;

  bool operator==(const GameRecord&) const = default;
};

// [b_1 .. b_s] where b_1 is the initial board and b_t is the position move
// m_t is played from. Throws IllegalMoveError naming the failing step.
std::vector<Board> replay(const GameRecord& record);

// Board after all moves of the record (b_{s+1}).
Board final_board(const GameRecord& record);

// Uniform random legal self-play until neither side can move.
GameRecord generate_random_game(uint64_t seed);

// Counts move sequences of exactly `depth` plies from the initial position,
// pass-aware. The engine correctness oracle target.
uint64_t perft(int depth);

std::string format_record(const GameRecord& record);
GameRecord parse_record(std::string_view line);  // throws NotationError / IllegalMoveError

struct TranscriptIssue {
  int line_number = 0;
  std::string message;
};

struct TranscriptImport {
  std::vector<GameRecord> games;
  std::vector<TranscriptIssue> issues;
};

// One game per line, moves space-separated; '#' comments and blank lines are
// skipped. Illegal or unparsable lines are reported, not thrown. With
// mirror_rows set every move is row-mirrored before replay.
TranscriptImport import_transcripts(std::istream& in, bool mirror_rows = false);

void export_transcripts(std::ostream& out, const std::vector<GameRecord>& games);

}  // namespace olab::engine
