#include "subhaz/dataset_io.hpp"
#include "subhaz/io.hpp"

#include <doctest.h>

#include <filesystem>

using namespace subhaz;
namespace fs = std::filesystem;

namespace {

std::string tree_text(const fs::path& dir) {
  std::string all;
  for (const char* f : {"subjects.csv", "sensor.csv", "events.csv", "samples.csv"}) all += read_text((dir / f).string());
  return all;
}

}  // namespace

TEST_SUITE("dataset_io") {
  TEST_CASE("number formatting round-trips") {
    for (double x : {0.1, 1.0 / 3.0, -2.5e-300, 123456789.125, 0.0})
      CHECK(parse_double(fmt(x)) == x);
    CHECK_THROWS_AS(parse_double("1.5x"), Error);
    CHECK_THROWS_AS(parse_long("2.5"), Error);
  }

  TEST_CASE("write, read, write is byte-identical") {
    SimConfig sc;
    sc.user_days = 4;
    sc.mcar = 0.2;
    const Dataset ds = simulate_dataset(sc, 13);
    const fs::path root = fs::temp_directory_path() / "subhaz_rt";
    fs::remove_all(root);
    write_dataset((root / "a").string(), to_stored(ds));
    const StoredDataset back = read_dataset((root / "a").string());
    write_dataset((root / "b").string(), back);
    CHECK(tree_text(root / "a") == tree_text(root / "b"));
    CHECK(back.subjects.size() == 4);
    CHECK(back.missing_values() == to_stored(ds).missing_values());
    CHECK(back.missing_values() > 0);
    const auto& s = ds.subjects[1];
    REQUIRE(!s.events.times.empty());
    CHECK(back.pi()(s.path.subject_id, s.events.times[0]) == 2.0);
    CHECK_THROWS_AS(back.pi()(s.path.subject_id, -1.0), Error);
    fs::remove_all(root);
  }

  TEST_CASE("empty dataset keeps headers") {
    SimConfig sc;
    sc.user_days = 0;
    const fs::path dir = fs::temp_directory_path() / "subhaz_empty";
    write_dataset(dir.string(), to_stored(simulate_dataset(sc, 1)));
    CHECK(read_text((dir / "subjects.csv").string()) == "subject_id,entry,tau\n");
    CHECK(read_text((dir / "sensor.csv").string()) == "subject_id,t,x0,obs0\n");
    fs::remove_all(dir);
  }

  TEST_CASE("broken files are I/O errors") {
    const fs::path dir = fs::temp_directory_path() / "subhaz_broken";
    fs::create_directories(dir);
    write_text((dir / "subjects.csv").string(), "subject_id,entry,tau\n0,0.5,12\n");
    write_text((dir / "sensor.csv").string(), "subject_id,t,x0,obs0\n0,0,1,1\n0,1,1,1\n");
    write_text((dir / "events.csv").string(), "subject_id,t,pi\n5,0.7,2\n");
    write_text((dir / "samples.csv").string(), "subject_id,t,pi\n");
    try {
      read_dataset(dir.string());
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::io);
    }
    fs::remove_all(dir);
    try {
      read_dataset(dir.string());
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::io);
    }
  }
}
