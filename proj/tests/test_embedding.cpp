#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "pamt/audio.hpp"
#include "pamt/embedding.hpp"
#include "pamt/rng.hpp"

using namespace pamt;

namespace {
std::string tmp_path(const char* name) {
  return (std::filesystem::temp_directory_path() / name).string();
}
}  // namespace

TEST_CASE("toy encoder shape and determinism") {
  AudioClip c = synth_tone(523.25, 2.0, 0.4, 16000);
  ToyEncoder enc(17);
  EmbeddingSequence e = enc.encode(c);
  REQUIRE(e.data.rows() == 100);
  REQUIRE(e.data.cols() == 768);
  CHECK(e.frame_rate_hz == 50.0);

  EmbeddingSequence e2 = enc.encode(c);
  REQUIRE(e.data == e2.data);

  ToyEncoder enc2(17);
  REQUIRE(enc2.encode(c).data == e.data);

  ToyEncoder other(18);
  CHECK(other.encode(c).data != e.data);
}

TEST_CASE("encoder is not amplitude invariant") {
  AudioClip c = synth_tone(440.0, 1.0, 0.6, 16000);
  AudioClip half = c;
  for (auto& s : half.samples) s *= 0.5;
  ToyEncoder enc(17);
  CHECK((enc.encode(c).data - enc.encode(half).data).cwiseAbs().maxCoeff() > 1e-3);
}

TEST_CASE("encoder rejects too-short clips") {
  AudioClip c;
  c.sample_rate_hz = 16000;
  c.samples.assign(100, 0.1);
  ToyEncoder enc(17);
  CHECK_THROWS(enc.encode(c));
}

TEST_CASE("embedding file round trip") {
  Rng rng = Rng::keyed(5, 3);
  for (int rep = 0; rep < 100; ++rep) {
    int t = 1 + static_cast<int>(rng.next_below(12));
    EmbeddingSequence e;
    e.frame_rate_hz = 50.0;
    e.data.resize(t, kEncoderDim);
    for (Eigen::Index i = 0; i < e.data.size(); ++i)
      e.data(i) = static_cast<float>(rng.normal());  // f32-representable
    std::string path = tmp_path("pamt_emb.pemb");
    write_embeddings(e, path);
    EmbeddingSequence back = read_embeddings(path);
    REQUIRE(back.data == e.data);
    REQUIRE(back.frame_rate_hz == e.frame_rate_hz);
    std::remove(path.c_str());
  }
}

TEST_CASE("embedding format errors") {
  std::string path = tmp_path("pamt_badhdr.pemb");
  {
    std::ofstream out(path, std::ios::binary);
    out << "XEMB";
    for (int i = 0; i < 16; ++i) out.put(0);
  }
  CHECK_THROWS(read_embeddings(path));

  // truncated payload: header claims 5 rows, write only 4
  {
    std::ofstream out(path, std::ios::binary);
    out << "PEMB";
    std::uint32_t ver = 1, t = 5, d = 768;
    float rate = 50.0f;
    out.write(reinterpret_cast<char*>(&ver), 4);
    out.write(reinterpret_cast<char*>(&t), 4);
    out.write(reinterpret_cast<char*>(&d), 4);
    out.write(reinterpret_cast<char*>(&rate), 4);
    std::vector<float> payload(4 * 768, 0.5f);
    out.write(reinterpret_cast<const char*>(payload.data()),
              static_cast<std::streamsize>(payload.size() * 4));
  }
  CHECK_THROWS(read_embeddings(path));
  std::remove(path.c_str());
}
