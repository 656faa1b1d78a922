#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace nbreplay::testing {

// Fixture notebooks shipped under tests/fixtures.
const std::vector<std::string>& fixture_names();

std::filesystem::path fixture_dir(const std::string& name);

// Writes the deterministic input data for a fixture into a workspace.
void write_fixture_data(const std::string& name, const std::filesystem::path& workspace);

}  // namespace nbreplay::testing
