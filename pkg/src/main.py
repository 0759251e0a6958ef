import hmac
import os
from http.client import UNAUTHORIZED, OK, INTERNAL_SERVER_ERROR, BAD_REQUEST

from dotenv import load_dotenv

from src.logger import setup_logger # Import the custom logger
log = setup_logger(__name__) # Setup logger for this module

# Attempt to load environment variables from .env file for local development
# This is useful for local testing but won't be used in Cloud Functions environment
load_dotenv()

import src.config as config
import src.market as market
from src.aggregator import BSGS, POLLARD_RHO
from src.errors import ArgumentError, FormatError, GistError, StageError, ValidationError
from src.harness import CustomerQuery, RunConfig, run_protocol

# Largest population a single HTTP request may simulate
MAX_HTTP_USERS = int(os.getenv("GIST_MAX_HTTP_USERS", "10000"))
DLOG_NAMES = {"bsgs": BSGS, "rho": POLLARD_RHO, "pollard_rho": POLLARD_RHO}
CLIENT_ERRORS = (ArgumentError, ValidationError)


def _authenticate_request(request):
    """Checks the bearer token against GIST_API_TOKEN."""
    expected = os.getenv("GIST_API_TOKEN")
    if not expected:
        log.error("GIST_API_TOKEN is not configured.")
        return ({"message": "Server authentication is not configured."}, INTERNAL_SERVER_ERROR)

    auth_header = request.headers.get('Authorization')
    if not auth_header:
        log.warning("Authorization header missing.")
        return ({"message": "Authorization header missing."}, UNAUTHORIZED)

    parts = auth_header.split()
    if len(parts) != 2 or parts[0].lower() != 'bearer':
        log.warning("Invalid Authorization header format.")
        return ({"message": "Invalid Authorization header format."}, UNAUTHORIZED)

    if not hmac.compare_digest(parts[1], expected):
        log.warning("Bearer token rejected.")
        return ({"message": "Invalid token."}, UNAUTHORIZED)
    return None


def _load_attribute_config():
    """Loads the attribute metadata file."""
    try:
        return config.load_attribute_specs(), None
    except FormatError as e:
        log.error(f"Attribute configuration unusable: {e}")
        return None, ({"message": f"Error reading attribute configuration: {e}"}, INTERNAL_SERVER_ERROR)


def _bad_request(message):
    log.warning(message)
    return None, ({"message": message}, BAD_REQUEST)


def _parse_and_validate_payload(request, specs):
    """
    Turns the JSON payload into a RunConfig.

    Recognized fields: n_users (required), epsilon, delta, no_noise, omega,
    scenario, seed, dlog, policy, modulus_bits, order_bits, query.
    """
    request_json = request.get_json(silent=True)
    if not request_json:
        return _bad_request("Request payload is missing or not valid JSON.")

    n_users = request_json.get("n_users")
    if n_users is None:
        return _bad_request("Missing 'n_users' in request payload.")
    if not isinstance(n_users, int) or isinstance(n_users, bool) or not 1 <= n_users <= MAX_HTTP_USERS:
        return _bad_request(f"Invalid 'n_users': must be an integer in [1, {MAX_HTTP_USERS}].")

    no_noise = request_json.get("no_noise", False)
    if not isinstance(no_noise, bool):
        log.warning("Invalid 'no_noise': must be a boolean value.")
        no_noise = False  # Default to False if invalid

    dlog = request_json.get("dlog")
    if dlog is not None and dlog not in DLOG_NAMES:
        return _bad_request(f"Invalid 'dlog': choose one of {sorted(DLOG_NAMES)}.")

    try:
        cfg = RunConfig.from_env(
            n_users=n_users,
            specs=specs,
            modulus_bits=request_json.get("modulus_bits"),
            order_bits=request_json.get("order_bits"),
            epsilon=request_json.get("epsilon"),
            delta=request_json.get("delta"),
            noise_enabled=not no_noise,
            omega=request_json.get("omega"),
            scenario=request_json.get("scenario", market.ALL_SHARE),
            seed=request_json.get("seed"),
            dlog_algorithm=DLOG_NAMES[dlog] if dlog else None,
            purchase_policy=request_json.get("policy", market.BUY_ALL),
            query=CustomerQuery.from_dict(request_json.get("query")),
        )
    except (ArgumentError, TypeError) as e:
        return _bad_request(f"Invalid run configuration: {e}")
    return cfg, None


def _status_for(error):
    cause = error.cause if isinstance(error, StageError) else error
    return BAD_REQUEST if isinstance(cause, CLIENT_ERRORS) else INTERNAL_SERVER_ERROR


def cloud_function_entrypoint(request):
    """
    Main entry point for the Cloud Function.
    Runs one simulated protocol round per request and returns its report.
    """
    # K_SERVICE is a common environment variable in Cloud Run/Cloud Functions (2nd gen)
    is_deployed = os.getenv("K_SERVICE") is not None

    if is_deployed:
        log.info("Running in deployed environment, authentication required.")
        error_response = _authenticate_request(request)
        if error_response:
            return error_response
    else:
        log.info("Running in local development environment, skipping authentication.")

    specs, error_response = _load_attribute_config()
    if error_response:
        return error_response

    cfg, error_response = _parse_and_validate_payload(request, specs)
    if error_response:
        return error_response

    try:
        report = run_protocol(cfg)
    except GistError as e:
        status = _status_for(e)
        log.error(f"Protocol run failed ({status}): {e}")
        return {"message": str(e)}, status

    log.info(f"Run {report.run_id} completed for {report.n_users} users.")
    return report.to_dict(), OK


# Example of how to run locally (for testing purposes)
if __name__ == "__main__":
    class MockRequest:
        def __init__(self, headers=None, get_json_data=None):
            self.headers = headers or {}
            self._get_json_data = get_json_data

        def get_json(self, silent=True):
            if self._get_json_data:
                return self._get_json_data()
            return None

    log.info("Running locally...")
    payload = {"n_users": 20, "modulus_bits": 256, "order_bits": 64, "omega": 0.1}
    response, status = cloud_function_entrypoint(MockRequest(get_json_data=lambda: payload))
    log.info(f"Status: {status}, revenue: {response.get('revenue', response)}")
