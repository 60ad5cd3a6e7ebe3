package auth;

import static org.hamcrest.CoreMatchers.equalTo;
import static org.hamcrest.CoreMatchers.is;
import static org.junit.Assert.assertFalse;
import static org.junit.Assert.assertThat;
import static org.junit.Assert.assertTrue;

import java.security.Principal;
import org.junit.Test;

public class UserPrincipalTest {

    /* Test that the principal ID assigned to a principal is correctly stored and 
       returned using the Java Principal API */
    @Test
    public void principalIdTest() {
        final String USER_ID = "someId";
        Principal principal = new UserPrincipal(USER_ID);
        String error = "Principal ID does not match expected value";
        assertThat(error, principal.getName(), is(equalTo(USER_ID)));
    }

    // Two principals created with the same id must be equal,
    // and principals with different ids must not be.
    @Test
    public void principalEqualityTest() {
        UserPrincipal a = new UserPrincipal("alice");
        UserPrincipal b = new UserPrincipal("alice");
        UserPrincipal c = new UserPrincipal("bob");
        assertTrue("same id should be equal", a.equals(b));
        assertFalse("different ids should differ", a.equals(c));
    }

    @Test
    public void hashCodeTest() {
        assertTrue(new UserPrincipal("x").hashCode() == "x".hashCode());
    }
}
