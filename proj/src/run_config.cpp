// Copyright 2026 The himapper Authors
// SPDX-License-Identifier: Apache-2.0

#include "himapper/run_config.hpp"

#include <openssl/evp.h>

#include <charconv>
#include <cmath>
#include <sstream>
#include <type_traits>

#include "himapper/errors.hpp"

namespace himapper {

namespace {

std::string format_value(const std::string& v) { return v; }
std::string format_value(bool v) { return v ? "true" : "false"; }

template <class T>
std::string format_value(T v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

void parse_value(const std::string& key, const std::string& text, std::string& out) { (void)key, out = text; }

void parse_value(const std::string& key, const std::string& text, bool& out) {
  if (text == "true" || text == "1") {
    out = true;
  } else if (text == "false" || text == "0") {
    out = false;
  } else {
    throw ConfigError("config: '" + key + "' expects true or false, got '" + text + "'");
  }
}

template <class T>
void parse_value(const std::string& key, const std::string& text, T& out) {
  T value{};
  auto res = std::from_chars(text.data(), text.data() + text.size(), value);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    throw ConfigError("config: '" + key + "' has malformed value '" + text + "'");
  }
  out = value;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

void require(bool ok, const std::string& message) {
  if (!ok) throw ConfigError("config: " + message);
}

}  // namespace

void RunConfig::validate() const {
  require(leaves > 0 && levels > 0 && width > 0 && heads > 0, "leaves, levels, width and heads must be positive");
  require(levels <= 16 && leaves % (std::size_t{1} << (levels - 1)) == 0,
          "leaves (" + std::to_string(leaves) + ") must be divisible by 2^(levels-1)");
  require(width % heads == 0, "heads must divide width");
  require(ff_ratio > 0 && decoder_layers > 0, "ff_ratio and decoder_layers must be positive");
  require(std::isfinite(curvature) && curvature > 0.0, "curvature must be positive");
  require(std::isfinite(leaf_init_std) && leaf_init_std >= 0.0, "leaf_init_std must be non-negative");
  require(std::isfinite(alpha) && alpha >= 0.0 && std::isfinite(beta) && beta >= 0.0,
          "alpha and beta must be non-negative");
  require(manifold == "hyperbolic" || manifold == "cosine", "manifold must be hyperbolic or cosine");
  require(std::isfinite(lr) && lr > 0.0 && std::isfinite(pretrain_lr) && pretrain_lr > 0.0,
          "learning rates must be positive");
  require(std::isfinite(weight_decay) && weight_decay >= 0.0, "weight_decay must be non-negative");
  require(batch_size > 0, "batch_size must be positive");
  require(backbone_blocks == "attention" || backbone_blocks == "conv", "backbone_blocks must be attention or conv");
  require(pooling == "mean" || pooling == "cls", "pooling must be mean or cls");
  require(num_classes > 0 && channels > 0, "num_classes and channels must be positive");
  require(std::isfinite(pixel_noise) && pixel_noise >= 0.0, "pixel_noise must be non-negative");
  require(mode == "pretrain" || mode == "finetune" || mode == "eval" || mode == "export" || mode == "ablate",
          "unknown mode '" + mode + "'");
  try {
    backbone_config().validate();
  } catch (const ArgumentError& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

BackboneConfig RunConfig::backbone_config() const {
  BackboneConfig b;
  b.channels = channels;
  b.image_size = image_size;
  b.patch = patch;
  b.width = width;
  b.heads = heads;
  b.depth = backbone_depth;
  b.ff_ratio = ff_ratio;
  b.blocks = backbone_blocks == "conv" ? BlockKind::kConv : BlockKind::kAttention;
  b.pooling = pooling == "cls" ? Pooling::kClassToken : Pooling::kMean;
  return b;
}

std::string RunConfig::to_text() const {
  std::string out;
  visit_fields(*this, [&](const char* name, const auto& value) {
    out += name;
    out += '=';
    out += format_value(value);
    out += '\n';
  });
  return out;
}

RunConfig RunConfig::from_text(const std::string& text) {
  RunConfig config;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(line_no) + ": expected key=value");
    const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    bool found = false;
    visit_fields(config, [&](const char* name, auto& member) {
      if (key == name) {
        parse_value(key, value, member);
        found = true;
      }
    });
    if (!found) throw ConfigError("config line " + std::to_string(line_no) + ": unknown key '" + key + "'");
  }
  return config;
}

std::string git_blob_sha1(const std::string& content) {
  std::string blob = "blob " + std::to_string(content.size());
  blob += '\0';
  blob += content;
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int length = 0;
  if (EVP_Digest(blob.data(), blob.size(), digest, &length, EVP_sha1(), nullptr) != 1) {
    throw std::runtime_error("sha1 digest failed");
  }
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < length; ++i) {
    const unsigned char byte = digest[i];
    out += hex[byte >> 4];
    out += hex[byte & 15];
  }
  return out;
}

}  // namespace himapper
