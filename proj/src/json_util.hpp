#pragma once

// Internal JSON helpers shared by the library sources and the CLI.

#include "evidexr/index.hpp"

#include <json.hpp>

namespace evidexr::jsonutil {

inline nlohmann::json hits_to_json(const index::NeighborList& nl) {
  auto arr = nlohmann::json::array();
  for (const auto& h : nl.hits) {
    arr.push_back({{"case_id", h.case_id}, {"score", h.score}, {"label", h.label}, {"position", h.position}});
  }
  return arr;
}

inline index::NeighborList hits_from_json(const nlohmann::json& arr, std::string query_id) {
  index::NeighborList nl;
  nl.query_id = std::move(query_id);
  for (const auto& h : arr) {
    nl.hits.push_back(index::Hit{h.at("case_id").get<std::string>(), h.at("score").get<double>(),
                                 h.at("label").get<Label>(), h.value("position", std::size_t{0})});
  }
  return nl;
}

}  // namespace evidexr::jsonutil
