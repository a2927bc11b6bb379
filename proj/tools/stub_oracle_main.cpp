// Deterministic evaluation oracle for tests and desk-scale experiments.
// Reads the candidate weights from TRAWL_WEIGHTS (or --weights) and prints
// {"loss": ...} where the loss grows with the deviation from --reference.

#include "trawl/errors.hpp"
#include "trawl/fixture.hpp"
#include "trawl/oracle.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <iostream>

int main(int argc, char** argv) {
    CLI::App app{"Stub oracle scoring weight deviation from a reference model"};
    std::filesystem::path reference, weights;
    app.add_option("--reference", reference, "Clean reference weights")->required();
    app.add_option("--weights", weights, "Candidate weights (default: $TRAWL_WEIGHTS)");
    CLI11_PARSE(app, argc, argv);

    if (weights.empty()) {
        const char* env = std::getenv(trawl::kWeightsEnvVar);
        if (!env || !*env) {
            std::cerr << "stub-oracle: no weights given and " << trawl::kWeightsEnvVar
                      << " is unset\n";
            return 2;
        }
        weights = env;
    }
    try {
        const double loss =
            trawl::stub_oracle_loss(trawl::load_weights(weights), trawl::load_weights(reference));
        nlohmann::ordered_json out;
        out["loss"] = loss;
        std::cout << out.dump() << "\n";
    } catch (const trawl::IoError& e) {
        std::cerr << "stub-oracle: " << e.what() << "\n";
        return 4;
    } catch (const std::invalid_argument& e) {
        std::cerr << "stub-oracle: " << e.what() << "\n";
        return 4;
    }
    return 0;
}
