#pragma once

#include <array>
#include <vector>

#include "lattice.hpp"

namespace dimerlab {

// One crossing along a corridor path: h(next) - h(current) = sigma * (1_e - 1/4).
struct CorridorStep {
  int edge;
  int sigma;
};

// Corner face eta_x has lower-left corner (x1*m - 1, x2*m - 1).
inline std::array<int, 2> eta_face(const TorusGraph& g, std::array<int, 2> x) {
  return {x[0] * g.m - 1, x[1] * g.m - 1};
}

// Step from face (X, Y) to its neighbour in direction dir (E, N, W, S).
inline CorridorStep face_step(const TorusGraph& g, int X, int Y, int dir) {
  switch (dir) {
    case 0: {  // crosses the vertical edge above (X+1, Y); (X+1, Y) is on the right
      int id = g.site_edge_id(X + 1, Y, 1);
      return {id, is_black_site(X + 1, Y) ? -1 : 1};
    }
    case 1: {  // crosses the horizontal edge right of (X, Y+1); (X+1, Y+1) is on the right
      int id = g.site_edge_id(X, Y + 1, 0);
      return {id, is_black_site(X + 1, Y + 1) ? -1 : 1};
    }
    case 2: {
      auto s = face_step(g, X - 1, Y, 0);
      return {s.edge, -s.sigma};
    }
    default: {
      auto s = face_step(g, X, Y - 1, 1);
      return {s.edge, -s.sigma};
    }
  }
}

// Corridor path from eta_from to eta_to: along the row corridor of `from`, then the column corridor of `to`.
// Cell coordinates are taken literally, so paths do not wrap unless asked to.
inline std::vector<CorridorStep> corridor_path(const TorusGraph& g, std::array<int, 2> from, std::array<int, 2> to) {
  std::vector<CorridorStep> out;
  auto f = eta_face(g, from);
  int X = f[0], Y = f[1];
  const int tx = to[0] * g.m - 1, ty = to[1] * g.m - 1;
  while (X != tx) {
    int dir = tx > X ? 0 : 2;
    out.push_back(face_step(g, X, Y, dir));
    X += dir == 0 ? 1 : -1;
  }
  while (Y != ty) {
    int dir = ty > Y ? 1 : 3;
    out.push_back(face_step(g, X, Y, dir));
    Y += dir == 1 ? 1 : -1;
  }
  return out;
}

// Variant that climbs the column corridor first.
inline std::vector<CorridorStep> corridor_path_vertical_first(const TorusGraph& g, std::array<int, 2> from,
                                                              std::array<int, 2> to) {
  auto a = corridor_path(g, from, {from[0], to[1]});
  auto b = corridor_path(g, {from[0], to[1]}, to);
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

inline double path_increment(const std::vector<CorridorStep>& path, const std::vector<char>& occupied) {
  double h = 0.0;
  for (auto s : path) h += s.sigma * ((occupied[s.edge] ? 1.0 : 0.0) - 0.25);
  return h;
}

}  // namespace dimerlab
