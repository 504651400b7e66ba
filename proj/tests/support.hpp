#pragma once

#include <gtest/gtest.h>

#include <filesystem>
#include <string>

#include "bdlab/imaging.hpp"
#include "bdlab/rng.hpp"

namespace bdlab::testing {

inline Image random_image(Shape s, Rng rng) {
  Image img(s);
  for (auto& v : img.pixels()) v = static_cast<std::uint8_t>(rng.below(256));
  return img;
}

/// A fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() /
            ("bdlab_" + tag + "_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) + "_" +
             std::to_string(reinterpret_cast<std::uintptr_t>(this)));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

#define EXPECT_BDLAB_ERROR(stmt, expected_code)                                  \
  do {                                                                           \
    try {                                                                        \
      stmt;                                                                      \
      ADD_FAILURE() << "expected " << ::bdlab::to_string(expected_code) << " error"; \
    } catch (const ::bdlab::Error& e) {                                          \
      EXPECT_EQ(e.code(), expected_code) << e.what();                            \
    }                                                                            \
  } while (0)

}  // namespace bdlab::testing
