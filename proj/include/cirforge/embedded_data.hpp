#pragma once

#include <string_view>

// Data tables compiled into the library from data/*.tsv.
namespace cirforge::data {

std::string_view lexicon_tsv();
std::string_view antonyms_tsv();
std::string_view templates_tsv();

}  // namespace cirforge::data
