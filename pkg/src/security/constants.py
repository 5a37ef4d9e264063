"""
Wire-format constants: namespace URIs, prefixes and algorithm identifiers.

The prefixes are fixed so that golden files stay byte-stable. See
docs/WIRE_FORMAT.md for the element layout these names are used in.
"""

SOAP_ENV_NS = "http://schemas.xmlsoap.org/soap/envelope/"
WSSE_NS = "http://docs.oasis-open.org/wss/2004/01/oasis-200401-wss-wssecurity-secext-1.0.xsd"
WSU_NS = "http://docs.oasis-open.org/wss/2004/01/oasis-200401-wss-wssecurity-utility-1.0.xsd"
DS_NS = "http://www.w3.org/2000/09/xmldsig#"
XENC_NS = "http://www.w3.org/2001/04/xmlenc#"
SESSION_NS = "urn:httpi-soap:session"
SERVICE_NS = "urn:httpi-soap:sample"
XML_NS = "http://www.w3.org/XML/1998/namespace"

SOAP_PREFIX = "soap"
WSSE_PREFIX = "wsse"
WSU_PREFIX = "wsu"
DS_PREFIX = "ds"
XENC_PREFIX = "xenc"
SESSION_PREFIX = "ses"

# Project canonicalization subset; not Exclusive C14N.
C14N_ALGORITHM = "urn:httpi-soap:c14n:subset-1"
RSA_SHA1_ALGORITHM = "http://www.w3.org/2000/09/xmldsig#rsa-sha1"
SHA1_ALGORITHM = "http://www.w3.org/2000/09/xmldsig#sha1"
AES256_CBC_ALGORITHM = "http://www.w3.org/2001/04/xmlenc#aes256-cbc"
RSA_OAEP_ALGORITHM = "http://www.w3.org/2001/04/xmlenc#rsa-oaep-mgf1p"
ENCRYPTED_CONTENT_TYPE = "http://www.w3.org/2001/04/xmlenc#Content"

X509V3_VALUE_TYPE = "wsse:X509v3"
BASE64_ENCODING_TYPE = "wsse:Base64Binary"
PASSWORD_DIGEST_TYPE = "PasswordDigest"

TIMESTAMP_FORMAT = "%Y-%m-%dT%H:%M:%SZ"
