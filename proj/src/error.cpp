#include "subag/error.hpp"

namespace subag {

std::string status_tag(const std::exception_ptr& ep) {
    try {
        std::rethrow_exception(ep);
    } catch (const InterpolationThreshold&) {
        return "interpolation_threshold";
    } catch (const ContractionUnavailable&) {
        return "contraction_unavailable";
    } catch (const PerfectRecovery&) {
        return "perfect_recovery";
    } catch (const NoConvergence&) {
        return "no_convergence";
    } catch (const DegenerateCorrection&) {
        return "degenerate_correction";
    } catch (const DependencyError&) {
        return "dependency_error";
    } catch (const NotImplemented&) {
        return "not_implemented";
    } catch (const DomainError&) {
        return "domain_error";
    } catch (const NumericError&) {
        return "numeric_error";
    } catch (const IntegrationError&) {
        return "integration_error";
    } catch (const ConfigError&) {
        return "config_error";
    } catch (...) {
        return "error";
    }
}

}  // namespace subag
